"""Simulation and verification lab for the square-root-regularized FTRL
bandit policy: exact solver, seeded environments, per-step diagnostics,
and a replication harness with rate fitting."""

__version__ = "0.1.0"

from .bandit_env import ConfigError, InstanceSpec, RngStream
from .ftrl_core import (
    DualSolution,
    ScaledLosses,
    SimplexPoint,
    SolverError,
    bregman,
    bregman_to_vertex,
    potential_gradient,
    solve_ftrl,
    tsallis_potential,
    underline,
)
from .harness import (
    CheckpointStats,
    ExperimentResult,
    PowerLawFit,
    RunConfig,
    fit_power_law,
    growth_ratio,
    run_experiment,
)
from .policy import PolicyState, StepRecord, initial_state, learning_rate, step

__all__ = [
    "ConfigError",
    "InstanceSpec",
    "RngStream",
    "DualSolution",
    "ScaledLosses",
    "SimplexPoint",
    "SolverError",
    "bregman",
    "bregman_to_vertex",
    "potential_gradient",
    "solve_ftrl",
    "tsallis_potential",
    "underline",
    "CheckpointStats",
    "ExperimentResult",
    "PowerLawFit",
    "RunConfig",
    "fit_power_law",
    "growth_ratio",
    "run_experiment",
    "PolicyState",
    "StepRecord",
    "initial_state",
    "learning_rate",
    "step",
    "__version__",
]
