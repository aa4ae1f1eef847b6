#!/usr/bin/env python3
"""Decay-rate study: run the two-arm Bernoulli experiment at a chosen
scale and fit the last-iterate exponents in log-log space.

Example:
    python scripts/run_rate_study.py --horizon 100000 --reps 1000 --out results/rate
    python scripts/run_rate_study.py --horizon 1000000 --reps 100   # slope -> -1/2
"""

import argparse
import sys

from tsallis_lab.bandit_env import InstanceSpec
from tsallis_lab.harness import RunConfig, column, fit_power_law, run_experiment


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--means", default="0.2,0.5")
    parser.add_argument("--alpha", type=float, default=0.5)
    parser.add_argument("--horizon", type=int, default=100_000)
    parser.add_argument("--reps", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=20260810)
    parser.add_argument("--out", default=None, help="optional output directory")
    parser.add_argument(
        "--window", default=None,
        help="fit window LO:HI (default: last two decades)",
    )
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    means = [float(x) for x in args.means.split(",")]
    config = RunConfig(
        instance=InstanceSpec.bernoulli(means),
        horizon=args.horizon,
        replications=args.reps,
        master_seed=args.seed,
        alpha=args.alpha,
        output=args.out,
    )
    result = run_experiment(config)
    print(f"{args.reps} replications to horizon {args.horizon} "
          f"in {result.wall_time:.1f}s on {result.threads} threads")

    if args.window:
        lo, hi = (int(x) for x in args.window.split(":"))
        window = (lo, hi)
    else:
        window = config.fit_window

    sub = config.instance.d - 1 if config.instance.star == 0 else 0
    targets = [
        ("mean_bregman", "divergence to optimal vertex"),
        (f"mean_sqrt_p_{sub}", "sqrt of suboptimal-arm probability"),
        (f"mean_p_{sub}", "suboptimal-arm probability"),
        ("mean_bregman_sq", "squared divergence"),
        ("mean_simple_regret", "simple regret"),
    ]
    print(f"log-log fits on [{window[0]}, {window[1]}]:")
    for name, label in targets:
        try:
            fit = fit_power_law(column(result.checkpoints, name), window)
        except ValueError as exc:
            print(f"  {name:>18}: unavailable ({exc})")
            continue
        print(f"  {name:>18}: slope {fit.slope:+.4f}  r^2 {fit.r_squared:.4f}  ({label})")
    if config.output:
        print(f"wrote {config.output}/run.csv and run_meta.txt")
    return 0


if __name__ == "__main__":
    sys.exit(main())
