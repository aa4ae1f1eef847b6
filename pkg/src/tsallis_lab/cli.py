"""Command-line front end: run, audit, fit and trace experiments.

Exit codes: 0 success, 1 runtime failure (I/O, solver), 2 invalid
configuration or usage, 3 audit found a per-step invariant violation,
4 an --expect-* assertion failed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness, metrics, policy
from .bandit_env import (
    ConfigError,
    InstanceSpec,
    RngStream,
    draw_losses,
    load_replay_matrix,
    replay_losses,
)
from .ftrl_core import SolverError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_VIOLATION = 3
EXIT_EXPECTATION = 4

_RUN_KEYS = (
    "means", "arm-kind", "alpha", "horizon", "reps", "seed", "out",
    "checkpoints", "fit-window", "audit", "allow-unstable-alpha", "fault",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsallis-lab",
        description="Simulation and verification lab for the square-root-"
        "regularized FTRL bandit policy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run replications and write checkpoint aggregates")
    _add_run_flags(run)
    run.set_defaults(func=cmd_run, force_audit=False)

    audit = sub.add_parser(
        "audit", help="run with per-step invariant checks; exit 3 on any violation"
    )
    _add_run_flags(audit)
    audit.set_defaults(func=cmd_run, force_audit=True)

    fit = sub.add_parser("fit", help="fit a power law to a results CSV column")
    fit.add_argument("--input", required=True, help="results CSV produced by run")
    fit.add_argument("--column", default="mean_bregman", help="column to fit")
    fit.add_argument("--window", default=None, help="fit window as LO:HI rounds")
    fit.add_argument(
        "--expect-slope-max", type=float, default=None,
        help="fail (exit 4) if the fitted slope exceeds this value",
    )
    fit.add_argument(
        "--expect-r2-min", type=float, default=None,
        help="fail (exit 4) if r^2 falls below this value",
    )
    fit.set_defaults(func=cmd_fit)

    trace = sub.add_parser("trace", help="single trajectory with full per-step dump")
    trace.add_argument("--replay", default=None, help="replay losses from a CSV table")
    trace.add_argument("--means", default=None, help="arm means for a stochastic trace")
    trace.add_argument("--alpha", type=float, default=0.5, help="learning-rate scale")
    trace.add_argument("--seed", type=int, default=0, help="master seed for sampling")
    trace.add_argument("--steps", type=int, default=10, help="number of rounds to trace")
    trace.add_argument(
        "--allow-unstable-alpha", action="store_true",
        help="admit alpha >= 1 (experimental)",
    )
    trace.set_defaults(func=cmd_trace)

    return parser


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--means", default=None, help="comma-separated arm means in [0,1]")
    parser.add_argument(
        "--arm-kind", default=None,
        help="loss family for every arm: bernoulli (default) or uniform:WIDTH",
    )
    parser.add_argument("--alpha", type=float, default=None, help="learning-rate scale in (0,1)")
    parser.add_argument("--horizon", type=int, default=None, help="rounds per replication")
    parser.add_argument("--reps", type=int, default=None, help="number of replications")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--out", default=None, help="output directory for run.csv + run_meta.txt")
    parser.add_argument(
        "--checkpoints", default=None,
        help="comma-separated checkpoint rounds (default: log-spaced, ~20/decade)",
    )
    parser.add_argument("--fit-window", default=None, help="metadata fit window as LO:HI")
    parser.add_argument(
        "--config", default=None,
        help="key=value config file; precedence: flags > file > defaults",
    )
    parser.add_argument(
        "--audit", action="store_true", default=None,
        help="enable per-step invariant checks (exit 3 on violation)",
    )
    parser.add_argument(
        "--allow-unstable-alpha", action="store_true", default=None,
        help="admit alpha >= 1 (experimental)",
    )
    parser.add_argument(
        "--fault", default=None,
        help="fault-injection hook for audit sensitivity, e.g. clip-probs=0.01",
    )


def load_config_file(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _RUN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _parse_means(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",") if x.strip() != ""])
    except ValueError:
        raise ConfigError(f"cannot parse means {text!r}")


def _parse_window(text: str) -> tuple:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise ConfigError(f"expected LO:HI, got {text!r}")


def _parse_fault(text: str) -> float:
    name, _, value = text.partition("=")
    if name != "clip-probs":
        raise ConfigError(f"unknown fault {name!r} (available: clip-probs=FLOOR)")
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"cannot parse fault floor {value!r}")


def _merged(args, key: str, file_values: dict, parse, default):
    flag = getattr(args, key.replace("-", "_"))
    if flag is not None:
        return flag
    if key in file_values:
        return parse(file_values[key])
    return default


def _build_run_config(args) -> harness.RunConfig:
    file_values = load_config_file(args.config) if args.config else {}

    means = _merged(args, "means", file_values, _parse_means, None)
    if means is None:
        raise ConfigError("no arm means given (flag --means or config file)")
    if isinstance(means, str):
        means = _parse_means(means)
    arm_kind = _merged(args, "arm-kind", file_values, str, "bernoulli")
    alpha = _merged(args, "alpha", file_values, float, 0.5)
    horizon = _merged(args, "horizon", file_values, int, None)
    if horizon is None:
        raise ConfigError("no horizon given (flag --horizon or config file)")
    reps = _merged(args, "reps", file_values, int, 1)
    seed = _merged(args, "seed", file_values, int, 0)
    out = _merged(args, "out", file_values, str, None)
    checkpoints = _merged(args, "checkpoints", file_values, str, None)
    fit_window = _merged(args, "fit-window", file_values, str, None)
    audit = bool(_merged(args, "audit", file_values, _parse_bool, False))
    allow = bool(_merged(args, "allow-unstable-alpha", file_values, _parse_bool, False))
    fault = _merged(args, "fault", file_values, str, None)

    kind, width = "bernoulli", 0.0
    if arm_kind != "bernoulli":
        name, _, rest = arm_kind.partition(":")
        if name != "uniform" or not rest:
            raise ConfigError(f"unknown arm kind {arm_kind!r}")
        kind = "uniform"
        try:
            width = float(rest)
        except ValueError:
            raise ConfigError(f"cannot parse uniform width {rest!r}")

    instance = InstanceSpec(
        means,
        kinds=(kind,) * means.size,
        widths=np.full(means.size, width),
    )
    if isinstance(checkpoints, str):
        try:
            checkpoints = np.array([int(x) for x in checkpoints.split(",")], dtype=np.int64)
        except ValueError:
            raise ConfigError(f"cannot parse checkpoints {checkpoints!r}")
    if isinstance(fit_window, str):
        fit_window = _parse_window(fit_window)

    return harness.RunConfig(
        instance=instance,
        horizon=int(horizon),
        replications=int(reps),
        master_seed=int(seed),
        alpha=float(alpha),
        checkpoints=checkpoints,
        audit=bool(audit or getattr(args, "force_audit", False)),
        output=Path(out) if out else None,
        fit_window=fit_window,
        allow_unstable_alpha=allow,
        fault_clip=_parse_fault(fault) if fault else 0.0,
    )


def cmd_run(args) -> int:
    config = _build_run_config(args)
    result = harness.run_experiment(config)

    print(f"{'t':>8} {'mean_bregman':>14} {'se':>10} {'simple_reg':>11} "
          f"{'pseudo_reg':>11} {'prob_A':>7}")
    for s in result.checkpoints:
        print(
            f"{s.t:>8d} {s.mean_bregman:>14.6g} {s.se_bregman:>10.3g} "
            f"{s.mean_simple_regret:>11.5g} {s.mean_pseudo_regret:>11.5g} "
            f"{s.prob_event_A:>7.3f}"
        )
    if config.output is not None:
        print(f"wrote {config.output / 'run.csv'} and {config.output / 'run_meta.txt'}")

    if result.audit is not None:
        report = result.audit
        breakdown = ", ".join(f"{k}={v}" for k, v in report.counts.items())
        print(
            f"audit: {report.total} violation(s) [{breakdown}]; "
            f"max decomposition residual {report.max_decomposition_residual:.3g}"
        )
        for v in report.violations:
            print(
                f"  replication={v.replication} round={v.round} check={v.check} "
                f"arm={v.arm} lhs={v.lhs:.6g} rhs={v.rhs:.6g}"
            )
        if report.total > 0:
            return EXIT_VIOLATION
    if result.failures:
        for rep, rnd in result.failures:
            print(
                f"solver failure: replication={rep} round={rnd} "
                f"master_seed={config.master_seed}",
                file=sys.stderr,
            )
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        columns = harness.read_csv(args.input)
    except OSError as exc:
        print(f"cannot read {args.input}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"malformed CSV: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if "t" not in columns or args.column not in columns:
        print(f"malformed CSV: missing column 't' or {args.column!r}", file=sys.stderr)
        return EXIT_RUNTIME

    t = columns["t"]
    window = _parse_window(args.window) if args.window else (t.min(), t.max())
    points = list(zip(t, columns[args.column]))
    try:
        fit = harness.fit_power_law(points, window)
    except ValueError as exc:
        print(f"cannot fit: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    print(
        f"column={args.column} window={int(window[0])}:{int(window[1])} "
        f"slope={fit.slope:.6g} intercept={fit.intercept:.6g} "
        f"r_squared={fit.r_squared:.6g} n_points={fit.n_points} "
        f"n_excluded={fit.n_excluded}"
    )
    failed = False
    if args.expect_slope_max is not None:
        ok = fit.slope <= args.expect_slope_max
        print(f"expect slope <= {args.expect_slope_max:g}: {'PASS' if ok else 'FAIL'}")
        failed |= not ok
    if args.expect_r2_min is not None:
        ok = fit.r_squared >= args.expect_r2_min
        print(f"expect r_squared >= {args.expect_r2_min:g}: {'PASS' if ok else 'FAIL'}")
        failed |= not ok
    return EXIT_EXPECTATION if failed else EXIT_OK


def cmd_trace(args) -> int:
    replay = None
    if args.replay is not None:
        try:
            replay = load_replay_matrix(args.replay)
        except (OSError, ValueError) as exc:
            print(f"cannot load replay file: {exc}", file=sys.stderr)
            return EXIT_RUNTIME

    if args.steps < 1:
        raise ConfigError("need at least one step")
    if replay is not None and args.steps > replay.shape[0]:
        raise ConfigError(
            f"trace of {args.steps} steps exceeds the {replay.shape[0]} replay rows"
        )

    if args.means is not None:
        spec = InstanceSpec.bernoulli(_parse_means(args.means))
        if replay is not None and spec.d != replay.shape[1]:
            raise ConfigError("means and replay table disagree on the number of arms")
    elif replay is not None:
        # Reference arm from the replay column means; ties go to the
        # lowest index (no uniqueness requirement for a fixed table).
        col_means = replay.mean(axis=0)
        star = int(np.argmin(col_means))
        spec = _TraceReference(col_means - col_means[star], star, replay.shape[1])
    else:
        raise ConfigError("trace needs --replay and/or --means")

    rng = RngStream(args.seed, 0)
    state = policy.initial_state(args.alpha, spec.d, args.allow_unstable_alpha)
    regret = metrics.RegretState.initial(spec.d)
    max_iw = 0.0

    print(f"{'t':>6} {'eta':>9} {'nu':>9} {'arm':>4} {'loss':>7} {'est':>10} "
          f"{'bregman':>10} {'residual':>10}  p")
    for t in range(1, args.steps + 1):
        losses = replay_losses(replay, t) if replay is not None else draw_losses(spec, rng)
        cumulative_before = state.cumulative
        state_next, record = policy.step(state, losses, rng)
        regret = metrics.advance_regret(regret, record, losses, spec)
        max_iw = max(max_iw, 1.0 / float(record.p.probs[record.chosen]))
        diag = metrics.step_diagnostics(
            record,
            state_next.last_point,
            regret,
            spec,
            cumulative_before,
            policy.learning_rate(args.alpha, t + 1),
            max_iw,
        )
        p_text = ",".join(f"{x:.6g}" for x in record.p.probs)
        print(
            f"{t:>6d} {record.eta:>9.6f} {record.dual_nu:>9.6f} {record.chosen:>4d} "
            f"{record.observed_loss:>7.4g} {record.est_loss[record.chosen]:>10.5g} "
            f"{diag.bregman_to_star:>10.5g} {diag.decomposition_residual:>10.3g}  p={p_text}"
        )
        state = state_next
    return EXIT_OK


class _TraceReference:
    """Minimal stand-in for an InstanceSpec when tracing a replay table."""

    def __init__(self, gaps: np.ndarray, star: int, d: int):
        self.gaps = gaps
        self.star = star
        self.d = d


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
