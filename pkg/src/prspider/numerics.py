"""Deterministic vector arithmetic and keyed random substreams.

Every reduction over workers runs in a fixed worker-index order, so a run
is bit-identical across repetitions and across execution parallelism.
Randomness is counter-style: each draw site is keyed by
(seed, worker, epoch, iteration, purpose), which makes any single worker
replayable in isolation and keeps draws on distinct workers independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "ParamVector",
    "RngStream",
    "DRAW_INNER",
    "DRAW_RESTART",
    "DRAW_INIT",
    "as_vector",
    "mean_reduce",
    "axpy",
    "sq_norm",
]

# Model coordinates are plain 1-D float64 arrays.
ParamVector = np.ndarray

# Purpose tags keep co-located draw sites (inner-loop batches, epoch
# restarts, the initial direction) on disjoint substreams.
DRAW_INNER = 0
DRAW_RESTART = 1
DRAW_INIT = 2


def as_vector(data, dim: int | None = None) -> ParamVector:
    """Coerce ``data`` to a finite 1-D float64 array (always a copy)."""
    v = np.array(data, dtype=np.float64, copy=True)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got ndim={v.ndim}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected dimension {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def _check_same_dim(vectors: Sequence[ParamVector]) -> None:
    shape = vectors[0].shape
    for k, v in enumerate(vectors[1:], start=1):
        if v.shape != shape:
            raise ValueError(
                f"dimension mismatch at index {k}: {v.shape} vs {shape}"
            )


def mean_reduce(vectors: Sequence[ParamVector]) -> ParamVector:
    """Componentwise mean over a worker-ordered list of vectors.

    The sum runs left-to-right over the worker index and is anchored at the
    first vector (``v0 + mean(v_k - v0)``), so the result is deterministic
    and averaging N copies of one vector returns that vector bitwise.
    """
    if len(vectors) == 0:
        raise ValueError("mean_reduce over an empty list")
    _check_same_dim(vectors)
    first = vectors[0]
    if len(vectors) == 1:
        return first.copy()
    acc = np.zeros_like(first)
    for v in vectors[1:]:
        acc += v - first
    acc /= len(vectors)
    # a zero accumulated deviation means the mean IS the anchor; returning
    # it verbatim keeps the identity bitwise (including signed zeros)
    return np.where(acc == 0.0, first, first + acc)


def axpy(x: ParamVector, a: float, y: ParamVector) -> ParamVector:
    """Return ``x + a * y`` without mutating the inputs."""
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not np.isfinite(a):
        raise ValueError("scalar must be finite")
    return x + a * y


def sq_norm(x: ParamVector) -> float:
    """Squared Euclidean norm of ``x``."""
    return float(np.dot(x, x))


@dataclass(frozen=True)
class RngStream:
    """Factory for reproducible, statistically independent substreams.

    A substream is addressed by (worker, epoch, iteration, purpose) on top
    of the run seed. Identical keys always produce identical draw
    sequences; distinct keys produce independent ones. Draw sites consume
    values sequentially from their own generator, so no draw site can
    perturb another.
    """

    seed: int

    def substream(
        self, worker: int, epoch: int, iteration: int, purpose: int = DRAW_INNER
    ) -> np.random.Generator:
        key = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(worker, epoch, iteration, purpose)
        )
        return np.random.Generator(np.random.PCG64(key))
