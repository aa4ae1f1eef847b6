"""Round-by-round execution of the square-root-regularized FTRL policy.

Each round: compute p_t from the cumulative loss estimates with learning
rate alpha/sqrt(t), sample an arm by inverse CDF from a single uniform,
form the importance-weighted loss estimate and accumulate it. States are
immutable; ``step`` returns the successor state plus a record of the
round, carrying the pre-update distribution p_t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bandit_env import ConfigError, RngStream
from .ftrl_core import DualSolution, SimplexPoint, solve_ftrl


def learning_rate(alpha: float, t: int) -> float:
    """Learning rate alpha / sqrt(t) for round t >= 1."""
    if t < 1:
        raise ValueError("rounds are 1-based")
    return alpha / math.sqrt(t)


def validate_alpha(alpha: float, allow_unstable: bool = False) -> float:
    """Reject alpha outside (0, 1) unless the experimental override is set.

    Values >= 1 are only admitted behind ``allow_unstable`` for exploring
    whether large learning-rate scales break last-iterate convergence.
    """
    alpha = float(alpha)
    if not (math.isfinite(alpha) and alpha > 0.0):
        raise ConfigError("alpha must be positive and finite")
    if alpha >= 1.0 and not allow_unstable:
        raise ConfigError(
            "alpha must lie in (0, 1); pass the unstable-alpha override to "
            "experiment outside the supported range"
        )
    return alpha


@dataclass(frozen=True)
class StepRecord:
    """One executed round, with the distribution used to act."""

    t: int
    p: SimplexPoint
    chosen: int
    observed_loss: float
    est_loss: np.ndarray
    eta: float
    dual_nu: float


@dataclass(frozen=True)
class PolicyState:
    """Policy state entering round ``t``: estimates and their minimizer."""

    alpha: float
    t: int
    cumulative: np.ndarray
    last_point: SimplexPoint
    last_dual: DualSolution


def initial_state(alpha: float, d: int, allow_unstable_alpha: bool = False) -> PolicyState:
    """State entering round 1: zero estimates, uniform distribution."""
    alpha = validate_alpha(alpha, allow_unstable_alpha)
    if d < 1:
        raise ConfigError("need at least one arm")
    cumulative = np.zeros(d)
    dual = solve_ftrl(learning_rate(alpha, 1), cumulative)
    return PolicyState(alpha, 1, cumulative, dual.point, dual)


def sample_arm(p, rng: RngStream) -> int:
    """Draw one arm index from ``p`` via inverse CDF on a single uniform."""
    probs = p.probs if isinstance(p, SimplexPoint) else np.asarray(p, dtype=np.float64)
    u = rng.next_arm_uniform()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, probs.size - 1)


def estimate_loss(p, chosen: int, observed: float) -> np.ndarray:
    """Importance-weighted full-vector estimate: observed/p at the chosen arm."""
    probs = p.probs if isinstance(p, SimplexPoint) else np.asarray(p, dtype=np.float64)
    est = np.zeros(probs.size)
    est[chosen] = observed / probs[chosen]
    return est


def empirical_argmin(cumulative) -> int:
    """Lowest-index minimizer of the cumulative loss estimates."""
    return int(np.argmin(np.asarray(cumulative)))


def step(state: PolicyState, losses: np.ndarray, rng: RngStream):
    """Execute one round; return (successor state, step record).

    The record carries the pre-update distribution: p_t is computed from
    the estimates gathered before round t, then the round-t loss arrives.
    """
    p = state.last_point
    chosen = sample_arm(p, rng)
    observed = float(losses[chosen])
    est = estimate_loss(p, chosen, observed)
    record = StepRecord(
        t=state.t,
        p=p,
        chosen=chosen,
        observed_loss=observed,
        est_loss=est,
        eta=learning_rate(state.alpha, state.t),
        dual_nu=state.last_dual.nu,
    )
    cumulative = state.cumulative + est
    next_t = state.t + 1
    dual = solve_ftrl(learning_rate(state.alpha, next_t), cumulative)
    next_state = PolicyState(state.alpha, next_t, cumulative, dual.point, dual)
    return next_state, record
