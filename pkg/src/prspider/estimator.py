"""Recursive variance-reduced gradient estimator and the averaging schedule.

The estimator tracks a direction ``v`` by adding, at each inner step, the
batch-mean difference of per-sample gradients between the current and the
previous iterate. The same batch is evaluated at both points: the variance
cancellation depends on the shared samples, and the cost is two oracle
accesses per sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ParamVector
from .problems import LocalObjective

__all__ = [
    "EstimatorState",
    "spider_update",
    "spider_update_with_samples",
    "tau",
    "is_averaging_step",
]


@dataclass(frozen=True)
class EstimatorState:
    """Worker-local estimator: direction, reference point, inner index."""

    v: ParamVector
    x_prev: ParamVector
    t: int = 0


def spider_update_with_samples(
    state: EstimatorState,
    obj: LocalObjective,
    x_curr: ParamVector,
    indices,
) -> EstimatorState:
    """Apply one recursion step using an explicit sample batch.

    Used directly by enumeration tests; ``spider_update`` draws the batch.
    """
    indices = np.asarray(indices)
    if indices.size < 1:
        raise ValueError("batch must contain at least one sample")
    delta = obj.pair_difference_mean(x_curr, state.x_prev, indices)
    return EstimatorState(v=state.v + delta, x_prev=x_curr, t=state.t + 1)


def spider_update(
    state: EstimatorState,
    obj: LocalObjective,
    x_curr: ParamVector,
    B: int,
    rng: np.random.Generator,
) -> EstimatorState:
    """One recursion step on a freshly drawn i.i.d. batch of size ``B``.

    Adds exactly ``2 * B`` to the worker's oracle counter and moves the
    reference point to ``x_curr``.
    """
    if B < 1:
        raise ValueError(f"batch size must be positive, got {B}")
    indices = obj.draw_indices(rng, B)
    return spider_update_with_samples(state, obj, x_curr, indices)


def tau(ell: int, I: int) -> int:
    """Most recent averaging index at or before ``ell``.

    Returns ``ell`` itself when it is a multiple of ``I``, otherwise the
    largest multiple of ``I`` strictly below it.
    """
    if ell < 0:
        raise ValueError("iteration index must be nonnegative")
    if I < 1:
        raise ValueError("averaging period must be at least 1")
    if ell % I == 0:
        return ell
    return (ell // I) * I


def is_averaging_step(t: int, I: int) -> bool:
    """Whether inner iteration ``t`` is a scheduled synchronization."""
    return t % I == 0
