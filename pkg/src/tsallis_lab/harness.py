"""Replication harness: run R independent trajectories, aggregate
checkpoint diagnostics, fit decay/growth exponents, persist results.

Replications are embarrassingly parallel. Each one owns counter-based
random streams keyed by its index and writes into a preallocated slot,
and aggregation is an ordered reduction over that array (numpy pairwise
summation), so results are bitwise independent of the worker schedule.
Worker count comes from the TSALLIS_LAB_THREADS environment variable
(default: logical cores).
"""

from __future__ import annotations

import csv
import math
import os
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, __version__
from .bandit_env import ConfigError, InstanceSpec, RngStream
from .ftrl_core import SolverError
from .policy import validate_alpha

DECOMPOSITION_TOLERANCE = 1e-7
CHECKPOINTS_PER_DECADE = 20

CHECK_NAMES = {
    _kernels.CHECK_SANDWICH: "sandwich_bounds",
    _kernels.CHECK_GROWTH: "step_growth",
    _kernels.CHECK_DECOMPOSITION: "decomposition_identity",
}

CSV_BASE_HEADER = [
    "t",
    "n_reps",
    "mean_bregman",
    "se_bregman",
    "mean_bregman_sq",
    "se_bregman_sq",
    "mean_simple_regret",
    "se_simple_regret",
    "mean_pseudo_regret",
    "se_pseudo_regret",
    "mean_rhat_plus_sq",
    "se_rhat_plus_sq",
    "mean_u_plus_sq",
    "se_u_plus_sq",
    "prob_event_A",
]


def default_checkpoints(horizon: int, per_decade: int = CHECKPOINTS_PER_DECADE) -> np.ndarray:
    """Log-spaced checkpoint rounds, ~per_decade per decade, horizon included."""
    if horizon < 1:
        raise ConfigError("horizon must be at least 1")
    top = int(math.ceil(per_decade * math.log10(horizon))) if horizon > 1 else 0
    grid = np.round(10.0 ** (np.arange(top + 1) / per_decade)).astype(np.int64)
    grid = grid[(grid >= 1) & (grid <= horizon)]
    return np.unique(np.append(grid, np.int64(horizon)))


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment needs; validated on construction."""

    instance: InstanceSpec
    horizon: int
    replications: int
    master_seed: int
    alpha: float = 0.5
    checkpoints: np.ndarray = None
    audit: bool = False
    output: Path = None
    fit_window: tuple = None
    allow_unstable_alpha: bool = False
    fault_clip: float = 0.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.replications < 1:
            raise ConfigError("need at least one replication")
        validate_alpha(self.alpha, self.allow_unstable_alpha)
        if self.checkpoints is None:
            checkpoints = default_checkpoints(self.horizon)
        else:
            checkpoints = np.asarray(self.checkpoints, dtype=np.int64)
            if checkpoints.ndim != 1 or checkpoints.size < 1:
                raise ConfigError("checkpoints must be a nonempty list of rounds")
            if np.any(np.diff(checkpoints) <= 0):
                raise ConfigError("checkpoints must be strictly increasing")
            if checkpoints[0] < 1 or checkpoints[-1] > self.horizon:
                raise ConfigError("checkpoints must lie within [1, horizon]")
        object.__setattr__(self, "checkpoints", checkpoints)
        if self.fit_window is None:
            object.__setattr__(
                self, "fit_window", (max(1, self.horizon // 100), self.horizon)
            )
        if self.fault_clip < 0.0 or self.fault_clip >= 1.0:
            raise ConfigError("fault clip floor must lie in [0, 1)")
        if self.output is not None:
            object.__setattr__(self, "output", Path(self.output))


@dataclass(frozen=True)
class CheckpointStats:
    """Cross-replication aggregates at one checkpoint round."""

    t: int
    n_reps: int
    mean_bregman: float
    se_bregman: float
    mean_bregman_sq: float
    se_bregman_sq: float
    mean_simple_regret: float
    se_simple_regret: float
    mean_pseudo_regret: float
    se_pseudo_regret: float
    mean_rhat_plus_sq: float
    se_rhat_plus_sq: float
    mean_u_plus_sq: float
    se_u_plus_sq: float
    prob_event_A: float
    mean_p: np.ndarray
    mean_sqrt_p: np.ndarray


@dataclass(frozen=True)
class AuditViolation:
    replication: int
    round: int
    check: str
    arm: int
    lhs: float
    rhs: float


@dataclass(frozen=True)
class AuditReport:
    counts: dict
    violations: list
    max_decomposition_residual: float

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class ExperimentResult:
    config: RunConfig
    checkpoints: list
    audit: AuditReport = None
    failures: list = field(default_factory=list)
    final_cumulative: np.ndarray = None
    max_importance_weight: float = 0.0
    wall_time: float = 0.0
    threads: int = 1


def resolve_worker_count(explicit: int = None) -> int:
    """Worker count: explicit argument, else TSALLIS_LAB_THREADS, else cores."""
    if explicit is not None:
        return max(1, int(explicit))
    env = os.environ.get("TSALLIS_LAB_THREADS")
    if env is not None:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"TSALLIS_LAB_THREADS must be an integer, got {env!r}")
        if value < 1:
            raise ConfigError("TSALLIS_LAB_THREADS must be at least 1")
        return value
    return os.cpu_count() or 1


_VIOLATION_ROWS_PER_REP = 16


def run_experiment(config: RunConfig, threads: int = None) -> ExperimentResult:
    """Execute all replications and aggregate per-checkpoint statistics.

    A replication whose solver fails is excluded from the aggregates and
    reported in ``result.failures`` as (replication, round).
    """
    start = time.perf_counter()
    n_threads = resolve_worker_count(threads)
    inst = config.instance
    d = inst.d
    n = config.horizon
    reps = config.replications
    ckpts = config.checkpoints
    n_ckpt = ckpts.size

    scalars = np.zeros((reps, n_ckpt, 6))
    probs = np.zeros((reps, n_ckpt, d))
    final_cum = np.zeros((reps, d))
    counts = np.zeros((reps, 3), dtype=np.int64)
    rows = np.zeros((reps, _VIOLATION_ROWS_PER_REP, 5))
    diags = np.zeros((reps, 4))
    status = np.zeros(reps, dtype=np.int64)

    means = inst.means
    gaps = inst.gaps
    kind_codes = inst.kind_codes
    widths = inst.widths

    def run_one(rep: int) -> None:
        rng = RngStream(config.master_seed, rep)
        env_u = rng.env_uniforms(n, d)
        arm_u = rng.arm_uniforms(n)
        status[rep] = _kernels.run_trajectory(
            means, gaps, inst.star, kind_codes, widths,
            config.alpha, n, ckpts, env_u, arm_u,
            config.fault_clip, config.audit, DECOMPOSITION_TOLERANCE,
            scalars[rep], probs[rep], final_cum[rep],
            counts[rep], rows[rep], diags[rep],
        )

    if n_threads == 1 or reps == 1:
        for rep in range(reps):
            run_one(rep)
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(run_one, range(reps)))

    failures = [
        (rep, int(diags[rep, 3]))
        for rep in range(reps)
        if status[rep] != _kernels.STATUS_OK
    ]
    completed = status == _kernels.STATUS_OK
    if not completed.any():
        raise SolverError(
            f"all replications failed; first failure {failures[0]} "
            f"(master_seed={config.master_seed})"
        )

    stats = aggregate_replications(ckpts, scalars[completed], probs[completed])

    audit = None
    if config.audit:
        audit = AuditReport(
            counts={
                name: int(counts[:, code].sum()) for code, name in CHECK_NAMES.items()
            },
            violations=_collect_violations(counts, rows),
            max_decomposition_residual=float(diags[:, 1].max()),
        )

    result = ExperimentResult(
        config=config,
        checkpoints=stats,
        audit=audit,
        failures=failures,
        final_cumulative=final_cum[completed],
        max_importance_weight=float(diags[:, 0].max()),
        wall_time=time.perf_counter() - start,
        threads=n_threads,
    )
    if config.output is not None:
        persist_result(result)
    return result


def _collect_violations(counts, rows, cap: int = 100) -> list:
    out = []
    for rep in range(counts.shape[0]):
        stored = min(int(counts[rep].sum()), rows.shape[1])
        for k in range(stored):
            if len(out) >= cap:
                return out
            code, rnd, arm, lhs, rhs = rows[rep, k]
            out.append(
                AuditViolation(
                    replication=rep,
                    round=int(rnd),
                    check=CHECK_NAMES[int(code)],
                    arm=int(arm),
                    lhs=float(lhs),
                    rhs=float(rhs),
                )
            )
    return out


def aggregate_replications(ckpt_rounds, scalars, probs) -> list:
    """Reduce per-replication checkpoint arrays to CheckpointStats.

    ``scalars`` is (R, n_ckpt, 6) in kernel column order, ``probs`` is
    (R, n_ckpt, d). Positive parts, squares and event indicators are
    taken per trajectory before averaging: the expectation is always the
    outermost operation.
    """
    n_reps = scalars.shape[0]

    def mean_se(values):
        mean = values.mean(axis=0)
        if n_reps > 1:
            se = values.std(axis=0, ddof=1) / math.sqrt(n_reps)
        else:
            se = np.zeros_like(mean)
        return mean, se

    bregman = scalars[:, :, 0]
    m_b, s_b = mean_se(bregman)
    m_b2, s_b2 = mean_se(bregman * bregman)
    m_sr, s_sr = mean_se(scalars[:, :, 1])
    m_pr, s_pr = mean_se(scalars[:, :, 2])
    rhat_plus = np.maximum(scalars[:, :, 3], 0.0)
    m_r2, s_r2 = mean_se(rhat_plus * rhat_plus)
    u_plus = np.maximum(scalars[:, :, 4], 0.0)
    m_u2, s_u2 = mean_se(u_plus * u_plus)
    prob_a = scalars[:, :, 5].mean(axis=0)
    mean_p = probs.mean(axis=0)
    mean_sqrt_p = np.sqrt(probs).mean(axis=0)

    return [
        CheckpointStats(
            t=int(ckpt_rounds[k]),
            n_reps=n_reps,
            mean_bregman=float(m_b[k]),
            se_bregman=float(s_b[k]),
            mean_bregman_sq=float(m_b2[k]),
            se_bregman_sq=float(s_b2[k]),
            mean_simple_regret=float(m_sr[k]),
            se_simple_regret=float(s_sr[k]),
            mean_pseudo_regret=float(m_pr[k]),
            se_pseudo_regret=float(s_pr[k]),
            mean_rhat_plus_sq=float(m_r2[k]),
            se_rhat_plus_sq=float(s_r2[k]),
            mean_u_plus_sq=float(m_u2[k]),
            se_u_plus_sq=float(s_u2[k]),
            prob_event_A=float(prob_a[k]),
            mean_p=mean_p[k].copy(),
            mean_sqrt_p=mean_sqrt_p[k].copy(),
        )
        for k in range(ckpt_rounds.size)
    ]


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int
    n_excluded: int


def fit_power_law(points, window) -> PowerLawFit:
    """Ordinary least squares on (log t, log value) inside ``window``.

    Nonpositive values inside the window are excluded (their count is
    reported); fewer than 3 usable points is an error. The slope is the
    empirical exponent.
    """
    pts = np.asarray(list(points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (t, value) pairs")
    lo, hi = window
    t = pts[:, 0]
    v = pts[:, 1]
    in_window = (t >= lo) & (t <= hi)
    usable = in_window & (v > 0.0)
    n_excluded = int(in_window.sum() - usable.sum())
    if usable.sum() < 3:
        raise ValueError(
            f"need at least 3 positive points in window [{lo}, {hi}], "
            f"have {int(usable.sum())}"
        )
    x = np.log(t[usable])
    y = np.log(v[usable])
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    fitted = design @ np.array([slope, intercept])
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return PowerLawFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
        n_points=int(usable.sum()),
        n_excluded=n_excluded,
    )


def growth_ratio(points, t_lo: int, t_hi: int, normalize: str = "linear") -> float:
    """Endpoint ratio after dividing out the hypothesized growth law.

    ``normalize="linear"`` divides values by t (a linear law gives ratio
    1), ``"flat"`` leaves them unchanged. Both endpoints must be present.
    """
    table = {int(t): float(v) for t, v in points}
    for endpoint in (t_lo, t_hi):
        if endpoint not in table:
            raise ValueError(f"no value recorded at t={endpoint}")
    if normalize == "linear":
        return (table[t_hi] / t_hi) / (table[t_lo] / t_lo)
    if normalize == "flat":
        return table[t_hi] / table[t_lo]
    raise ValueError(f"unknown normalization {normalize!r}")


def column(stats, name: str):
    """Extract (t, value) pairs for a named CSV column from stats."""
    rows = [stats_row(s) for s in stats]
    return [(row["t"], row[name]) for row in rows]


def stats_row(s: CheckpointStats) -> dict:
    row = {
        "t": s.t,
        "n_reps": s.n_reps,
        "mean_bregman": s.mean_bregman,
        "se_bregman": s.se_bregman,
        "mean_bregman_sq": s.mean_bregman_sq,
        "se_bregman_sq": s.se_bregman_sq,
        "mean_simple_regret": s.mean_simple_regret,
        "se_simple_regret": s.se_simple_regret,
        "mean_pseudo_regret": s.mean_pseudo_regret,
        "se_pseudo_regret": s.se_pseudo_regret,
        "mean_rhat_plus_sq": s.mean_rhat_plus_sq,
        "se_rhat_plus_sq": s.se_rhat_plus_sq,
        "mean_u_plus_sq": s.mean_u_plus_sq,
        "se_u_plus_sq": s.se_u_plus_sq,
        "prob_event_A": s.prob_event_A,
    }
    for i, value in enumerate(s.mean_p):
        row[f"mean_p_{i}"] = float(value)
    for i, value in enumerate(s.mean_sqrt_p):
        row[f"mean_sqrt_p_{i}"] = float(value)
    return row


def _format(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def write_csv(stats, path) -> None:
    """Write checkpoint aggregates; floats carry 17 significant digits so
    a reload is bit-exact."""
    d = stats[0].mean_p.size
    header = (
        CSV_BASE_HEADER
        + [f"mean_p_{i}" for i in range(d)]
        + [f"mean_sqrt_p_{i}" for i in range(d)]
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for s in stats:
            row = stats_row(s)
            fh.write(",".join(_format(row[name]) for name in header) + "\n")


def read_csv(path) -> dict:
    """Load a results CSV into {column name: float array}."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        columns = {name: [] for name in reader.fieldnames}
        for record in reader:
            for name in reader.fieldnames:
                value = record[name]
                if value is None or value == "":
                    raise ValueError(f"{path}: ragged row in CSV")
                columns[name].append(float(value))
    return {name: np.asarray(values) for name, values in columns.items()}


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.TimeoutExpired):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def persist_result(result: ExperimentResult) -> tuple:
    """Write run.csv plus the run_meta.txt sidecar into config.output."""
    config = result.config
    out_dir = Path(config.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "run.csv"
    meta_path = out_dir / "run_meta.txt"
    write_csv(result.checkpoints, csv_path)

    lines = {
        "means": ",".join(_format(m) for m in config.instance.means),
        "arm_kinds": ",".join(config.instance.kinds),
        "alpha": _format(config.alpha),
        "horizon": str(config.horizon),
        "replications": str(config.replications),
        "master_seed": str(config.master_seed),
        "n_checkpoints": str(config.checkpoints.size),
        "audit": str(config.audit).lower(),
        "fault_clip": _format(config.fault_clip),
        "threads": str(result.threads),
        "package_version": __version__,
        "git_describe": git_describe(),
        "n_failed_replications": str(len(result.failures)),
        "max_importance_weight": _format(result.max_importance_weight),
        "wall_time_s": f"{result.wall_time:.3f}",
    }
    if result.audit is not None:
        for name, count in result.audit.counts.items():
            lines[f"violations_{name}"] = str(count)
        lines["max_decomposition_residual"] = _format(
            result.audit.max_decomposition_residual
        )
    lo, hi = config.fit_window
    lines["fit_window"] = f"{lo}:{hi}"
    try:
        fit = fit_power_law(column(result.checkpoints, "mean_bregman"), (lo, hi))
        lines["fit_column"] = "mean_bregman"
        lines["fit_slope"] = _format(fit.slope)
        lines["fit_intercept"] = _format(fit.intercept)
        lines["fit_r_squared"] = _format(fit.r_squared)
    except ValueError as exc:
        lines["fit_error"] = str(exc)
    with open(meta_path, "w") as fh:
        for key, value in lines.items():
            fh.write(f"{key}={value}\n")
    return csv_path, meta_path
