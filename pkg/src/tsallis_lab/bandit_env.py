"""Loss generation: stochastic i.i.d. instances and deterministic replay.

Randomness is counter-based (Philox) and keyed by (master seed,
replication index, purpose), so environment draws and the policy's arm
sampling never share a stream position. A trajectory is reproduced
bit-for-bit from (master_seed, replication_index) alone, independent of
scheduling, and bulk pregeneration yields the same values as sequential
per-round draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

PURPOSE_ENV = 0
PURPOSE_ARM = 1

_MAX_REPLICATION = 1 << 56

ARM_KINDS = ("bernoulli", "uniform")


class ConfigError(ValueError):
    """Invalid run configuration (rejected before any computation)."""


@dataclass(frozen=True)
class InstanceSpec:
    """Ground-truth arm means plus derived gap structure.

    ``kinds`` tags each arm's loss distribution: "bernoulli" draws
    {0, 1} with mean mu_i; "uniform" draws uniformly on an interval
    centered at mu_i. Uniform widths are clamped per arm to
    min(width, 2*mu_i, 2*(1-mu_i)) so the support stays inside [0, 1]
    and the mean stays exactly mu_i.

    The arm with the smallest mean must be unique; ties are a
    configuration error, not silently broken.
    """

    means: np.ndarray
    kinds: tuple = ()
    widths: np.ndarray = None
    star: int = field(init=False)
    gaps: np.ndarray = field(init=False)
    min_gap: float = field(init=False)

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        object.__setattr__(self, "means", means)
        if means.ndim != 1 or means.size < 1:
            raise ConfigError("means must be a nonempty 1-d vector")
        if not np.all(np.isfinite(means)):
            raise ConfigError("means must be finite")
        if np.any(means < 0.0) or np.any(means > 1.0):
            raise ConfigError("means must lie in [0, 1]")

        kinds = tuple(self.kinds) if self.kinds else ("bernoulli",) * means.size
        if len(kinds) != means.size:
            raise ConfigError("one distribution kind per arm required")
        for kind in kinds:
            if kind not in ARM_KINDS:
                raise ConfigError(f"unknown arm kind {kind!r}")
        object.__setattr__(self, "kinds", kinds)

        widths = self.widths
        if widths is None:
            widths = np.zeros(means.size)
        widths = np.asarray(widths, dtype=np.float64)
        if widths.size != means.size or np.any(widths < 0.0):
            raise ConfigError("widths must be nonnegative, one per arm")
        widths = np.minimum(widths, np.minimum(2.0 * means, 2.0 * (1.0 - means)))
        object.__setattr__(self, "widths", widths)

        star = int(np.argmin(means))
        if means.size > 1 and np.sum(means == means[star]) > 1:
            raise ConfigError(
                "the optimal arm must be unique: several arms attain the "
                f"minimum mean {means[star]}"
            )
        gaps = means - means[star]
        object.__setattr__(self, "star", star)
        object.__setattr__(self, "gaps", gaps)
        positive = gaps[gaps > 0.0]
        object.__setattr__(
            self, "min_gap", float(positive.min()) if positive.size else 0.0
        )

    @property
    def d(self) -> int:
        return self.means.size

    @property
    def kind_codes(self) -> np.ndarray:
        codes = {
            "bernoulli": _kernels.ARM_BERNOULLI,
            "uniform": _kernels.ARM_UNIFORM,
        }
        return np.array([codes[k] for k in self.kinds], dtype=np.int64)

    @classmethod
    def bernoulli(cls, means) -> "InstanceSpec":
        return cls(np.asarray(means, dtype=np.float64))


class RngStream:
    """Per-replication random streams, one Philox generator per purpose.

    Identical (master_seed, replication_index) pairs reproduce identical
    draw sequences regardless of thread count or execution order. The
    environment consumes exactly d uniforms per round and arm sampling
    exactly one, so bulk pregeneration and per-round draws agree.
    """

    def __init__(self, master_seed: int, replication_index: int = 0):
        if not 0 <= replication_index < _MAX_REPLICATION:
            raise ConfigError("replication index out of range")
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.replication_index = int(replication_index)
        self.rounds_drawn = 0
        self._env = self._generator(PURPOSE_ENV)
        self._arm = self._generator(PURPOSE_ARM)

    def _generator(self, purpose: int) -> np.random.Generator:
        key = np.array(
            [self.master_seed, (self.replication_index << 8) | purpose],
            dtype=np.uint64,
        )
        return np.random.Generator(np.random.Philox(key=key))

    def env_uniforms(self, n_rounds: int, d: int) -> np.ndarray:
        """Pregenerate the environment uniforms for ``n_rounds`` rounds."""
        return self._env.random((n_rounds, d))

    def arm_uniforms(self, n_rounds: int) -> np.ndarray:
        """Pregenerate the arm-sampling uniforms for ``n_rounds`` rounds."""
        return self._arm.random(n_rounds)

    def next_env_uniforms(self, d: int) -> np.ndarray:
        return self._env.random(d)

    def next_arm_uniform(self) -> float:
        return float(self._arm.random())


def draw_losses(spec: InstanceSpec, rng: RngStream) -> np.ndarray:
    """One i.i.d. loss vector in [0, 1]^d with componentwise means mu."""
    u = rng.next_env_uniforms(spec.d)
    rng.rounds_drawn += 1
    bernoulli = (u < spec.means).astype(np.float64)
    uniform = np.clip(spec.means + spec.widths * (u - 0.5), 0.0, 1.0)
    return np.where(spec.kind_codes == _kernels.ARM_BERNOULLI, bernoulli, uniform)


def draw_losses_bulk(spec: InstanceSpec, rng: RngStream, n_rounds: int) -> np.ndarray:
    """Losses for ``n_rounds`` rounds at once; row t equals the t-th
    sequential ``draw_losses`` call on an identically keyed stream."""
    u = rng.env_uniforms(n_rounds, spec.d)
    rng.rounds_drawn += n_rounds
    bernoulli = (u < spec.means).astype(np.float64)
    uniform = np.clip(spec.means + spec.widths * (u - 0.5), 0.0, 1.0)
    return np.where(spec.kind_codes == _kernels.ARM_BERNOULLI, bernoulli, uniform)


def replay_losses(matrix: np.ndarray, t: int) -> np.ndarray:
    """Row ``t`` (1-based round index) of a fixed loss table."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("replay table must be 2-d (rounds x arms)")
    if not 1 <= t <= matrix.shape[0]:
        raise ValueError(
            f"round {t} outside replay range [1, {matrix.shape[0]}]"
        )
    return matrix[t - 1]


def load_replay_matrix(path) -> np.ndarray:
    """Load a replay table: one row per round, d comma-separated columns."""
    matrix = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    if matrix.size == 0:
        raise ValueError(f"replay file {path} is empty")
    if np.any(matrix < 0.0) or np.any(matrix > 1.0) or not np.all(np.isfinite(matrix)):
        raise ValueError(f"replay file {path} has entries outside [0, 1]")
    return matrix
