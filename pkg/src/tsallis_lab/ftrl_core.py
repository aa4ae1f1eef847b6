"""Square-root potential on the simplex and the exact regularized-leader step.

The regularizer is Psi(p) = -4 * sum_i sqrt(p_i). Its minimizer over the
simplex of eta*<p, L> + Psi(p) has the closed form
p_i = 4*(eta*shifted_L_i + nu)^-2 with a scalar dual variable nu chosen so
the probabilities sum to one; ``solve_ftrl`` finds that root exactly
(safeguarded Newton inside a guaranteed bracket) instead of running a
generic optimizer. Probabilities are never floored or clipped: downstream
consumers rely on the exact iterates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

SUM_TOLERANCE = 1e-10
NU_TOLERANCE = _kernels.NU_TOLERANCE
MAX_SOLVER_ITERATIONS = _kernels.MAX_SOLVER_ITERATIONS


class SolverError(RuntimeError):
    """Dual root-finding failed to converge (numeric pathology)."""


@dataclass(frozen=True)
class SimplexPoint:
    """Strictly positive probability vector over the arms."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.size < 1:
            raise ValueError("probability vector must be 1-d and nonempty")
        if not np.all(np.isfinite(probs)):
            raise ValueError("probability vector must be finite")
        if not np.all(probs > 0.0):
            raise ValueError("probability vector must be strictly positive")
        if abs(float(probs.sum()) - 1.0) > SUM_TOLERANCE:
            raise ValueError("probability vector must sum to 1")

    @property
    def d(self) -> int:
        return self.probs.size

    @classmethod
    def uniform(cls, d: int) -> "SimplexPoint":
        return cls(np.full(d, 1.0 / d))


@dataclass(frozen=True)
class ScaledLosses:
    """Min-shifted loss vector: nonnegative with minimum exactly zero."""

    values: np.ndarray
    d: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.size != self.d:
            raise ValueError("length mismatch")
        if not np.all(np.isfinite(values)):
            raise ValueError("entries must be finite")
        if values.min() != 0.0 or np.any(values < 0.0):
            raise ValueError("minimum entry must be exactly zero")


@dataclass(frozen=True)
class DualSolution:
    """Solver output: the distribution plus dual-variable diagnostics."""

    point: SimplexPoint
    nu: float
    residual: float
    iterations: int

    def __post_init__(self):
        hi = 2.0 * np.sqrt(self.point.d)
        if not (2.0 - 1e-9 <= self.nu <= hi + 1e-9):
            raise ValueError(f"dual variable {self.nu} outside [2, {hi}]")
        if abs(self.residual) > NU_TOLERANCE:
            raise ValueError("residual exceeds solver tolerance")


def _probs(p) -> np.ndarray:
    if isinstance(p, SimplexPoint):
        return p.probs
    return np.asarray(p, dtype=np.float64)


def tsallis_potential(p) -> float:
    """Potential value -4 * sum_i sqrt(p_i); lies in [-4*sqrt(d), -4]."""
    return -4.0 * float(np.sum(np.sqrt(_probs(p))))


def potential_gradient(p) -> np.ndarray:
    """Gradient of the potential: component i equals -2 / sqrt(p_i)."""
    return -2.0 / np.sqrt(_probs(p))


def bregman(x, y) -> float:
    """Divergence D(x, y) induced by the potential.

    ``x`` may lie anywhere in the closed simplex (vertices included; the
    potential is finite there), ``y`` must be strictly interior since only
    its gradient enters.
    """
    x = _probs(x)
    y = _probs(y)
    if np.any(x < 0.0) or abs(float(x.sum()) - 1.0) > SUM_TOLERANCE:
        raise ValueError("first argument must lie in the closed simplex")
    return (
        tsallis_potential(x)
        - tsallis_potential(y)
        - float(np.dot(x - y, potential_gradient(y)))
    )


def bregman_to_vertex(p, star: int) -> float:
    """Divergence from the point mass on arm ``star`` to ``p``.

    Specialized closed form 2*sum_{i != star} sqrt(p_i)
    + 2*(1 - sqrt(p_star))^2 / sqrt(p_star); free of the cancellation the
    general formula suffers as p_star -> 1. Accepts closed-simplex input
    so the vertex limit itself evaluates to exactly 0.
    """
    p = _probs(p)
    if not 0 <= star < p.size:
        raise ValueError("arm index out of range")
    s = np.sqrt(p)
    rem = 1.0 - s[star]
    with np.errstate(divide="ignore"):
        tail = 2.0 * rem * rem / s[star] if rem != 0.0 else 0.0
    return float(2.0 * (s.sum() - s[star]) + tail)


def underline(values) -> ScaledLosses:
    """Shift a finite vector so its minimum becomes exactly zero."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size < 1:
        raise ValueError("expected a nonempty 1-d vector")
    if not np.all(np.isfinite(values)):
        raise ValueError("entries must be finite")
    return ScaledLosses(values - values.min(), values.size)


def solve_ftrl(eta: float, cumulative) -> DualSolution:
    """Exact minimizer over the simplex of eta*<p, cumulative> + Psi(p).

    The cumulative losses are min-shifted first (the minimizer is
    invariant to constant shifts), which pins the dual variable inside
    [2, 2*sqrt(d)] regardless of loss magnitude. Raises SolverError if
    the root finder fails to converge, which cannot happen for finite
    inputs.
    """
    cumulative = np.ascontiguousarray(cumulative, dtype=np.float64)
    if cumulative.ndim != 1 or cumulative.size < 1:
        raise ValueError("cumulative losses must be a nonempty 1-d vector")
    if not np.all(np.isfinite(cumulative)):
        raise ValueError("cumulative losses must be finite")
    if not (np.isfinite(eta) and eta > 0.0):
        raise ValueError("learning rate must be positive and finite")

    d = cumulative.size
    if d == 1:
        return DualSolution(SimplexPoint(np.array([1.0])), 2.0, 0.0, 0)

    scaled = eta * underline(cumulative).values
    nu, residual, iterations, converged = _kernels.solve_dual(scaled)
    if not converged:
        raise SolverError(
            f"dual root-finding did not reach |residual| <= {NU_TOLERANCE} "
            f"within {MAX_SOLVER_ITERATIONS} iterations (residual {residual})"
        )
    r = 2.0 / (scaled + nu)
    point = r * r
    if point.min() <= 0.0:
        raise SolverError("probability underflow in solution map")
    return DualSolution(SimplexPoint(point), float(nu), float(residual), iterations)
