"""Iteration engine: exact operator orbits, randomized orbits, and paired runs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# Any coordinate beyond this magnitude (or any NaN) aborts an iteration.
DIVERGENCE_LIMIT = 1e12

NORMS = ("l2", "sup")


class ConfigurationError(ValueError):
    """Bad inputs: shapes, ranges, unknown keys, malformed files."""


class DivergenceError(RuntimeError):
    """An orbit left the trusted numeric range."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"orbit diverged at step {step}")


class NonConvergenceError(RuntimeError):
    """An iterative solve hit its iteration cap before reaching tolerance."""


def as_point(x) -> np.ndarray:
    """Coerce to a finite 1-D float64 vector."""
    p = np.asarray(x, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ConfigurationError(f"point must be a nonempty 1-D vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ConfigurationError("point has non-finite coordinates")
    return p


def distance(a: np.ndarray, b: np.ndarray, norm: str = "l2") -> float:
    """Distance between two points under the chosen norm ("l2" or "sup")."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if norm == "l2":
        return float(np.linalg.norm(d))
    if norm == "sup":
        return float(np.max(np.abs(d))) if d.size else 0.0
    raise ConfigurationError(f"unknown norm {norm!r}, expected one of {NORMS}")


@dataclass(frozen=True)
class RngStream:
    """Deterministic, splittable random stream.

    A stream is identified by a master seed plus a lineage of integer
    indices (run, step, trial, ...).  Distinct lineages give statistically
    independent generators, and the same lineage always reproduces the
    same draws, so ensemble members can be computed in any order.
    """

    master_seed: int
    lineage: tuple[int, ...] = ()

    def __post_init__(self):
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigurationError("master_seed must be a nonnegative integer")
        if any((not isinstance(i, int)) or i < 0 for i in self.lineage):
            raise ConfigurationError("stream lineage indices must be nonnegative integers")

    def child(self, *indices: int) -> "RngStream":
        """Derive a sub-stream by extending the lineage."""
        return RngStream(self.master_seed, self.lineage + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream; every call replays the same draws."""
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.lineage)
        return np.random.default_rng(seq)


@dataclass(frozen=True)
class ExactOperatorHandle:
    """A deterministic self-map of R^dimension.

    claimed_modulus, when known, is an upper bound on the map's Lipschitz
    constant (sub-1 means the map is a contraction).
    """

    apply: Callable[[np.ndarray], np.ndarray]
    dimension: int
    claimed_modulus: float | None = None


@dataclass(frozen=True)
class RandomOperatorFactory:
    """Factory of i.i.d. random approximations of an exact operator.

    realize(stream) draws one realization: a deterministic map that can be
    applied to any number of points (all sharing the drawn randomness).
    sample_size is the number of per-step samples the realization averages.
    """

    sample_size: int
    realize: Callable[[RngStream], Callable[[np.ndarray], np.ndarray]]
    dimension: int


@dataclass(frozen=True)
class TrajectoryPair:
    """An exact orbit and a randomized orbit started from the same point."""

    exact: np.ndarray   # (K+1, d)
    random: np.ndarray  # (K+1, d)
    n: int
    norm_tag: str


def _check_step(x: np.ndarray, step: int, dimension: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dimension,):
        raise ConfigurationError(
            f"operator returned shape {x.shape} at step {step}, expected ({dimension},)")
    if np.any(np.isnan(x)) or np.any(np.abs(x) > DIVERGENCE_LIMIT):
        raise DivergenceError(step)
    return x


def iterate_exact(op: ExactOperatorHandle, y0, num_steps: int) -> np.ndarray:
    """Orbit y_0, T(y_0), T^2(y_0), ... as a (num_steps+1, d) array."""
    y0 = as_point(y0)
    if y0.shape != (op.dimension,):
        raise ConfigurationError(
            f"initial point has dimension {y0.size}, operator expects {op.dimension}")
    if num_steps < 0:
        raise ConfigurationError("num_steps must be >= 0")
    out = np.empty((num_steps + 1, op.dimension))
    out[0] = y0
    y = y0
    for k in range(1, num_steps + 1):
        y = _check_step(op.apply(y), k, op.dimension)
        out[k] = y
    return out


def iterate_random(factory: RandomOperatorFactory, z0, num_steps: int,
                   run: RngStream) -> np.ndarray:
    """Randomized orbit: step k applies a fresh realization drawn from run.child(k).

    Each (run, step) pair gets its own stream, so re-running with the same
    stream reproduces the orbit bitwise and distinct runs are independent.
    """
    z0 = as_point(z0)
    if z0.shape != (factory.dimension,):
        raise ConfigurationError(
            f"initial point has dimension {z0.size}, factory expects {factory.dimension}")
    if num_steps < 0:
        raise ConfigurationError("num_steps must be >= 0")
    out = np.empty((num_steps + 1, factory.dimension))
    out[0] = z0
    z = z0
    for k in range(1, num_steps + 1):
        op_k = factory.realize(run.child(k - 1))
        z = _check_step(op_k(z), k, factory.dimension)
        out[k] = z
    return out


def run_paired(op: ExactOperatorHandle, factory: RandomOperatorFactory, x0,
               num_steps: int, run: RngStream, norm: str = "l2") -> TrajectoryPair:
    """Exact and randomized orbits from a shared start, for distance tracking."""
    if norm not in NORMS:
        raise ConfigurationError(f"unknown norm {norm!r}, expected one of {NORMS}")
    if op.dimension != factory.dimension:
        raise ConfigurationError("operator and factory dimensions differ")
    exact = iterate_exact(op, x0, num_steps)
    random = iterate_random(factory, x0, num_steps, run)
    return TrajectoryPair(exact=exact, random=random, n=factory.sample_size, norm_tag=norm)


def time_average(trajectory: np.ndarray) -> np.ndarray:
    """Running means: row k is the average of rows 0..k."""
    traj = np.asarray(trajectory, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[0] == 0:
        raise ConfigurationError("trajectory must be a nonempty (K+1, d) array")
    counts = np.arange(1, traj.shape[0] + 1, dtype=np.float64)
    return np.cumsum(traj, axis=0) / counts[:, None]


def fixed_point_residual(op: ExactOperatorHandle, x, norm: str = "l2") -> float:
    """How far x is from being a fixed point of op."""
    x = as_point(x)
    return distance(op.apply(x), x, norm)
