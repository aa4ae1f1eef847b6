"""Per-step diagnostics: divergence to the optimal vertex, regrets, and
the exact per-round decomposition identity evaluated as a residual.

Inner products against the sparse loss estimate are evaluated through
their algebraic simplifications (e.g. <est, p> is the observed loss by
construction), so support invariants hold exactly rather than to
floating-point roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bandit_env import InstanceSpec
from .ftrl_core import SimplexPoint, bregman, bregman_to_vertex
from .policy import StepRecord, empirical_argmin


def _probs(p) -> np.ndarray:
    return p.probs if isinstance(p, SimplexPoint) else np.asarray(p, dtype=np.float64)


@dataclass(frozen=True)
class RegretState:
    """Cumulative scalar/vector sums after some number of rounds.

    ``cumulative_est`` mirrors the policy's loss-estimate totals (same
    update arithmetic, hence bit-identical), so regret readers never
    recompute what the policy already holds.
    """

    sum_inner: float
    cumulative_est: np.ndarray
    cumulative_real_loss_per_arm: np.ndarray
    incurred_real: float
    pseudo_regret: float

    @classmethod
    def initial(cls, d: int) -> "RegretState":
        return cls(0.0, np.zeros(d), np.zeros(d), 0.0, 0.0)


def advance_regret(
    state: RegretState, record: StepRecord, losses: np.ndarray, spec: InstanceSpec
) -> RegretState:
    """Fold one executed round into the running sums."""
    return RegretState(
        sum_inner=state.sum_inner + record.observed_loss,
        cumulative_est=state.cumulative_est + record.est_loss,
        cumulative_real_loss_per_arm=state.cumulative_real_loss_per_arm
        + np.asarray(losses, dtype=np.float64),
        incurred_real=state.incurred_real + record.observed_loss,
        pseudo_regret=state.pseudo_regret + float(spec.gaps[record.chosen]),
    )


def simple_regret(p, spec: InstanceSpec) -> float:
    """Expected per-round suboptimality of acting from ``p``: sum_i gap_i * p_i."""
    probs = _probs(p)
    if probs.size != spec.d:
        raise ValueError("dimension mismatch")
    return float(np.dot(spec.gaps, probs))


def estimated_regret(state: RegretState) -> float:
    """Worst-case estimated regret: running inner sum minus the smallest total."""
    return state.sum_inner - float(np.min(state.cumulative_est))


def realized_regret(state: RegretState) -> float:
    """Regret against the best fixed arm on the realized loss sequence."""
    return state.incurred_real - float(np.min(state.cumulative_real_loss_per_arm))


def u_statistic(state: RegretState, star: int) -> float:
    """Optimal-arm estimate total minus the running inner sum."""
    return float(state.cumulative_est[star]) - state.sum_inner


def decomposition_residual(
    prev: StepRecord,
    next_p,
    eta_t: float,
    eta_next: float,
    cumulative_t: np.ndarray,
    star: int,
) -> float:
    """Defect of the per-round three-term decomposition (exact in exact
    arithmetic when both distributions are exact minimizers).

    The instantaneous comparison <p_t - e_star, est_t> splits into a
    stability term, a penalty term (divergence difference to the optimal
    vertex over the next learning rate) and a drift term from the
    learning-rate change. Returns |lhs - (stability + penalty + drift)|.
    """
    p_t = _probs(prev.p)
    p_next = _probs(next_p)
    cumulative_t = np.asarray(cumulative_t, dtype=np.float64)
    lhat = float(prev.est_loss[prev.chosen])
    indicator = 1.0 if prev.chosen == star else 0.0

    lhs = lhat * (p_t[prev.chosen] - indicator)
    stability = (
        lhat * (p_t[prev.chosen] - p_next[prev.chosen])
        - bregman(p_next, p_t) / eta_next
    )
    penalty = (
        bregman_to_vertex(p_t, star) - bregman_to_vertex(p_next, star)
    ) / eta_next
    drift = (
        (1.0 / eta_next - 1.0 / eta_t)
        * eta_t
        * (float(np.dot(p_next, cumulative_t)) - float(cumulative_t[star]))
    )
    return abs(lhs - stability - penalty - drift)


def audit_step(prev_p, next_p, d: int, t: int) -> list:
    """Check the per-step growth bound p_{t+1,i} <= 7*d*p_{t,i} + 1/t.

    ``t`` indexes the earlier round. Returns [(arm, lhs, rhs), ...] for
    every component exceeding its bound by more than 1e-9; empty when the
    bound holds everywhere.
    """
    prev_p = _probs(prev_p)
    next_p = _probs(next_p)
    bound = 7.0 * d * prev_p + 1.0 / t
    report = []
    for i in range(d):
        if next_p[i] > bound[i] + 1e-9:
            report.append((i, float(next_p[i]), float(bound[i])))
    return report


@dataclass(frozen=True)
class StepDiagnostics:
    """Everything the trace output prints for one round."""

    t: int
    bregman_to_star: float
    bregman_squared: float
    simple_regret: float
    event_A: bool
    rhat_plus: float
    u_plus: float
    decomposition_residual: float
    max_importance_weight: float


def step_diagnostics(
    record: StepRecord,
    next_p,
    regret_after: RegretState,
    spec: InstanceSpec,
    cumulative_before: np.ndarray,
    eta_next: float,
    max_importance_weight: float,
) -> StepDiagnostics:
    """Assemble the full diagnostic row for one executed round.

    ``cumulative_before`` holds the estimates entering the round (they
    decide the concentration event and feed the drift term).
    """
    div = bregman_to_vertex(record.p, spec.star)
    rhat = estimated_regret(regret_after)
    u = u_statistic(regret_after, spec.star)
    residual = decomposition_residual(
        record, next_p, record.eta, eta_next, cumulative_before, spec.star
    )
    return StepDiagnostics(
        t=record.t,
        bregman_to_star=div,
        bregman_squared=div * div,
        simple_regret=simple_regret(record.p, spec),
        event_A=empirical_argmin(cumulative_before) == spec.star,
        rhat_plus=max(rhat, 0.0),
        u_plus=max(u, 0.0),
        decomposition_residual=residual,
        max_importance_weight=max_importance_weight,
    )
