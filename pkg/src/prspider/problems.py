"""Synthetic objective suites with exact oracle metadata.

Two families are provided:

* ``quadratic`` -- per-sample losses ``0.5 * ||x - c||^2`` around drawn
  centers. Gradient-Lipschitz modulus is exactly 1, the optimum value is
  known in closed form, and the worker-vs-global gradient deviation is a
  constant computable exactly from the drawn centers.
* ``sigmoid`` -- bounded nonconvex regression losses ``phi(<a, x> - b)``
  with ``phi(t) = t^2 / (1 + t^2)``. The advertised Lipschitz modulus is
  ``max|phi''| * max ||a||^2 = 2 * max ||a||^2`` and the deviation bound
  follows from ``max|phi'| = 3*sqrt(3)/8`` and the compact draw of the
  ``a`` vectors, so both hold uniformly rather than just empirically.

Per-sample oracle calls are metered on the owning worker's counter.
The analytic mean-value / mean-gradient oracles used for metrics are free:
they never touch the counters.

Online suites expose a sampler only. Internally the sampler draws from a
finite atom pool, which is what makes the analytic expectation oracles
exact; the pool is not enumerable through the public sample-id surface.
"""

from __future__ import annotations

import dataclasses
import math
from contextlib import ExitStack, contextmanager
from dataclasses import dataclass, field

import numpy as np

from .numerics import ParamVector, as_vector, mean_reduce, sq_norm

__all__ = [
    "UnsupportedOperationError",
    "LocalObjective",
    "QuadraticObjective",
    "SigmoidObjective",
    "ProblemSuite",
    "make_quadratic_suite",
    "make_nonconvex_suite",
    "quadratic_suite_from_centers",
    "sigmoid_suite_from_params",
    "true_global_gradient",
    "PHI_GRAD_MAX",
    "PHI_CURV_MAX",
]


class UnsupportedOperationError(RuntimeError):
    """Raised when an oracle is asked for something its kind cannot do."""


# Extrema of phi(t) = t^2/(1+t^2): |phi'| peaks at 3*sqrt(3)/8 (t=1/sqrt(3)),
# |phi''| peaks at 2 (t=0).
PHI_GRAD_MAX = 3.0 * math.sqrt(3.0) / 8.0
PHI_CURV_MAX = 2.0


class LocalObjective:
    """One worker's cost function plus its metered per-sample oracle.

    ``sample_count`` is ``None`` for online objectives, which then expose
    sampling only. ``smoothness`` and ``variance_bound`` are the advertised
    L and sigma; both are certified by the randomized test suite.
    """

    kind = "abstract"

    def __init__(
        self,
        worker_id: int,
        dim: int,
        sample_count: int | None,
        pool_size: int,
        smoothness: float,
        variance_bound: float,
    ):
        self.worker_id = worker_id
        self.dim = dim
        self.sample_count = sample_count
        self.smoothness = smoothness
        self.variance_bound = variance_bound
        self.ifo_count = 0
        self._pool_size = pool_size
        self._counting = True

    @property
    def is_finite_sum(self) -> bool:
        return self.sample_count is not None

    @contextmanager
    def counters_suspended(self):
        """Temporarily disable IFO metering (diagnostics only)."""
        previous = self._counting
        self._counting = False
        try:
            yield self
        finally:
            self._counting = previous

    def _charge(self, amount: int) -> None:
        if self._counting:
            self.ifo_count += int(amount)

    # -- sampling ---------------------------------------------------------

    def draw_indices(self, gen: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` i.i.d. sample indices (with replacement)."""
        return gen.integers(0, self._pool_size, size=int(size))

    def _resolve_sample(self, sample) -> np.ndarray:
        if isinstance(sample, np.random.Generator):
            return self.draw_indices(sample, 1)
        if not self.is_finite_sum:
            raise UnsupportedOperationError(
                "online objective accepts a generator, not a sample id"
            )
        s = int(sample)
        if not 0 <= s < self.sample_count:
            raise ValueError(
                f"sample id {s} out of range [0, {self.sample_count})"
            )
        return np.array([s])

    # -- metered oracle surface --------------------------------------------

    def stochastic_eval(self, x: ParamVector, sample) -> tuple[float, ParamVector]:
        """One oracle access: the (value, gradient) pair for one sample."""
        idx = self._resolve_sample(sample)
        value = float(self._sample_values(x, idx)[0])
        grad = self._sample_gradients(x, idx)[0]
        self._charge(1)
        return value, grad

    def stochastic_gradient(self, x: ParamVector, sample) -> ParamVector:
        """Gradient of one sample; costs exactly one oracle access."""
        idx = self._resolve_sample(sample)
        grad = self._sample_gradients(x, idx)[0]
        self._charge(1)
        return grad

    def batch_gradient_mean(self, x: ParamVector, indices) -> ParamVector:
        """Mean gradient over a drawn batch; costs ``len(indices)``."""
        idx = np.asarray(indices)
        grads = self._sample_gradients(x, idx)
        self._charge(idx.shape[0])
        return grads.mean(axis=0)

    def pair_difference_mean(
        self, x_new: ParamVector, x_old: ParamVector, indices
    ) -> ParamVector:
        """Mean of per-sample gradient differences over a shared batch.

        Each sample is evaluated at both points, so the cost is
        ``2 * len(indices)``. The difference is formed row-wise before
        averaging: equal inputs give an exactly zero result.
        """
        idx = np.asarray(indices)
        g_new = self._sample_gradients(x_new, idx)
        g_old = self._sample_gradients(x_old, idx)
        self._charge(2 * idx.shape[0])
        return (g_new - g_old).mean(axis=0)

    def full_gradient(self, x: ParamVector) -> ParamVector:
        """Exact local gradient by one pass over all samples; costs n."""
        if not self.is_finite_sum:
            raise UnsupportedOperationError(
                "full gradient requires an enumerable sample set"
            )
        grads = self._sample_gradients(x, np.arange(self.sample_count))
        self._charge(self.sample_count)
        return grads.mean(axis=0)

    # -- analytic oracles (metrics only, never metered) ---------------------

    def mean_value(self, x: ParamVector) -> float:
        raise NotImplementedError

    def mean_gradient(self, x: ParamVector) -> ParamVector:
        raise NotImplementedError

    # -- family internals ----------------------------------------------------

    def _sample_values(self, x: ParamVector, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _sample_gradients(self, x: ParamVector, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class QuadraticObjective(LocalObjective):
    """Average of ``0.5 * ||x - c_j||^2`` over per-sample centers."""

    kind = "quadratic"

    def __init__(self, worker_id: int, centers: np.ndarray):
        centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        n, d = centers.shape
        super().__init__(
            worker_id,
            dim=d,
            sample_count=n,
            pool_size=n,
            smoothness=1.0,
            variance_bound=0.0,  # assigned by the suite factory
        )
        self.centers = centers
        self.center_mean = centers.mean(axis=0)
        # mean squared spread around the local mean; exact value offset
        self.center_spread_sq = float(
            np.mean(np.sum((centers - self.center_mean) ** 2, axis=1))
        )

    def _sample_values(self, x, idx):
        diff = x[None, :] - self.centers[idx]
        return 0.5 * np.sum(diff * diff, axis=1)

    def _sample_gradients(self, x, idx):
        return x[None, :] - self.centers[idx]

    def mean_value(self, x):
        return 0.5 * sq_norm(x - self.center_mean) + 0.5 * self.center_spread_sq

    def mean_gradient(self, x):
        return x - self.center_mean


class SigmoidObjective(LocalObjective):
    """Average of ``phi(<a_j, x> - b_j)`` with ``phi(t) = t^2/(1+t^2)``."""

    kind = "sigmoid"

    def __init__(
        self,
        worker_id: int,
        features: np.ndarray,
        offsets: np.ndarray,
        online: bool = False,
    ):
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        offsets = np.asarray(offsets, dtype=np.float64).reshape(-1)
        pool, d = features.shape
        if offsets.shape[0] != pool:
            raise ValueError("features and offsets disagree on sample count")
        feature_norms = np.sqrt(np.sum(features * features, axis=1))
        self.feature_norm_max = float(feature_norms.max())
        super().__init__(
            worker_id,
            dim=d,
            sample_count=None if online else pool,
            pool_size=pool,
            smoothness=PHI_CURV_MAX * self.feature_norm_max**2,
            variance_bound=0.0,  # assigned by the suite factory
        )
        self.features = features
        self.offsets = offsets

    @staticmethod
    def _phi(t: np.ndarray) -> np.ndarray:
        t2 = t * t
        return t2 / (1.0 + t2)

    @staticmethod
    def _phi_prime(t: np.ndarray) -> np.ndarray:
        t2 = t * t
        return 2.0 * t / ((1.0 + t2) ** 2)

    def _margins(self, x, idx):
        return self.features[idx] @ x - self.offsets[idx]

    def _sample_values(self, x, idx):
        return self._phi(self._margins(x, idx))

    def _sample_gradients(self, x, idx):
        slope = self._phi_prime(self._margins(x, idx))
        return slope[:, None] * self.features[idx]

    def mean_value(self, x):
        t = self.features @ x - self.offsets
        return float(np.mean(self._phi(t)))

    def mean_gradient(self, x):
        t = self.features @ x - self.offsets
        return (self.features.T @ self._phi_prime(t)) / self._pool_size


@dataclass
class ProblemSuite:
    """N worker objectives sharing a dimension and a common start point.

    ``optimum_value`` is exact for the quadratic family and a certified
    lower bound (zero) for the nonnegative sigmoid family. ``config`` echoes
    the construction parameters for experiment bookkeeping.
    """

    objectives: list[LocalObjective]
    optimum_value: float
    initial_point: ParamVector
    config: dict = field(default_factory=dict)

    @property
    def num_workers(self) -> int:
        return len(self.objectives)

    @property
    def dim(self) -> int:
        return self.objectives[0].dim

    @property
    def is_finite_sum(self) -> bool:
        return all(o.is_finite_sum for o in self.objectives)

    @property
    def sample_count(self) -> int | None:
        return self.objectives[0].sample_count

    @property
    def smoothness(self) -> float:
        return max(o.smoothness for o in self.objectives)

    @property
    def variance_bound(self) -> float:
        return max(o.variance_bound for o in self.objectives)

    def value(self, x: ParamVector) -> float:
        """Analytic global objective value (no oracle charge)."""
        total = 0.0
        for obj in self.objectives:
            total += obj.mean_value(x)
        return total / self.num_workers

    def gradient(self, x: ParamVector) -> ParamVector:
        """Analytic global gradient (no oracle charge)."""
        return mean_reduce([obj.mean_gradient(x) for obj in self.objectives])

    def initial_gap(self) -> float:
        """Upper bound on the optimality gap at the start point."""
        return self.value(self.initial_point) - self.optimum_value

    def total_ifo(self) -> int:
        return sum(obj.ifo_count for obj in self.objectives)

    def reset_counters(self) -> None:
        for obj in self.objectives:
            obj.ifo_count = 0

    @contextmanager
    def counters_suspended(self):
        with ExitStack() as stack:
            for obj in self.objectives:
                stack.enter_context(obj.counters_suspended())
            yield self

    def with_initial_point(self, x0) -> "ProblemSuite":
        """Copy of the suite starting from a caller-chosen point."""
        return dataclasses.replace(
            self, initial_point=as_vector(x0, self.dim)
        )


def true_global_gradient(suite: ProblemSuite, x: ParamVector) -> ParamVector:
    """Exact gradient of the global objective; a free metrics oracle."""
    return suite.gradient(x)


def _finish_quadratic_suite(
    centers: np.ndarray, initial_point: ParamVector, config: dict
) -> ProblemSuite:
    num_workers = centers.shape[0]
    grand_mean = centers.reshape(-1, centers.shape[-1]).mean(axis=0)
    objectives = []
    for i in range(num_workers):
        obj = QuadraticObjective(i, centers[i])
        # uniform worker-vs-global deviation: for this family the gradient
        # deviation is x-free and equals the spread around the grand mean
        dev_sq = float(
            np.mean(np.sum((centers[i] - grand_mean) ** 2, axis=1))
        )
        obj.variance_bound = math.sqrt(dev_sq)
        objectives.append(obj)
    suite = ProblemSuite(
        objectives=objectives,
        optimum_value=0.0,
        initial_point=as_vector(initial_point),
        config=config,
    )
    # minimum of the averaged quadratic sits at the grand mean
    suite.optimum_value = suite.value(grand_mean)
    return suite


def make_quadratic_suite(
    N: int,
    n: int,
    d: int,
    heterogeneity: float,
    seed: int,
    center_spread: float = 1.0,
    initial_offset: float | None = None,
) -> ProblemSuite:
    """Quadratic suite with worker means separated by ``heterogeneity``.

    Draws are scaled by 1/sqrt(d) per coordinate so the key squared norms
    stay O(1) regardless of dimension. ``center_spread`` scales the
    within-worker sample spread; zero makes every sample identical
    (a zero-deviation suite). ``initial_offset`` pins the squared distance
    of the start point from the optimum (the start direction still comes
    from the seed); by default the offset is a unit-scale draw.
    """
    if min(N, n, d) < 1:
        raise ValueError("N, n, d must all be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    scale = 1.0 / math.sqrt(d)
    worker_means = heterogeneity * rng.normal(0.0, scale, size=(N, d))
    centers = worker_means[:, None, :] + center_spread * rng.normal(
        0.0, scale, size=(N, n, d)
    )
    grand_mean = centers.reshape(-1, d).mean(axis=0)
    offset = rng.normal(0.0, scale, size=d)
    if initial_offset is not None:
        if initial_offset < 0:
            raise ValueError("initial_offset must be nonnegative")
        norm = math.sqrt(float(np.dot(offset, offset)))
        offset = offset * (math.sqrt(initial_offset) / norm)
    initial_point = grand_mean + offset
    config = {
        "family": "quadratic",
        "N": N,
        "n": n,
        "d": d,
        "heterogeneity": heterogeneity,
        "seed": seed,
        "center_spread": center_spread,
    }
    if initial_offset is not None:
        config["initial_offset"] = initial_offset
    return _finish_quadratic_suite(centers, initial_point, config)


def quadratic_suite_from_centers(centers, initial_point) -> ProblemSuite:
    """Quadratic suite over explicit centers of shape (N, n, d)."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 3:
        raise ValueError("centers must have shape (N, n, d)")
    config = {
        "family": "quadratic-explicit",
        "centers": centers.tolist(),
        "initial_point": list(map(float, np.asarray(initial_point))),
    }
    return _finish_quadratic_suite(centers, as_vector(initial_point), config)


def _finish_sigmoid_suite(
    features: np.ndarray,
    offsets: np.ndarray,
    initial_point: ParamVector,
    online: bool,
    config: dict,
) -> ProblemSuite:
    num_workers = features.shape[0]
    objectives = [
        SigmoidObjective(i, features[i], offsets[i], online=online)
        for i in range(num_workers)
    ]
    # ||grad sample|| <= max|phi'| * ||a||, so worker-vs-global deviation is
    # uniformly below max|phi'| * (local max ||a|| + global max ||a||)
    global_amax = max(o.feature_norm_max for o in objectives)
    for obj in objectives:
        obj.variance_bound = PHI_GRAD_MAX * (obj.feature_norm_max + global_amax)
    return ProblemSuite(
        objectives=objectives,
        optimum_value=0.0,  # certified lower bound: the losses are nonnegative
        initial_point=as_vector(initial_point),
        config=config,
    )


def make_nonconvex_suite(
    N: int,
    n: int | str | None,
    d: int,
    heterogeneity: float,
    seed: int,
    online_pool: int = 512,
) -> ProblemSuite:
    """Bounded nonconvex sigmoid-loss suite; ``n=None``/"online" for online.

    Feature vectors are drawn from a compact box and scaled so
    ``||a|| <= 1``; per-worker target parameters are separated by
    ``heterogeneity``. Online suites sample from an internal atom pool of
    ``online_pool`` points per worker, which keeps the expectation oracles
    exact while the public surface stays sampling-only.
    """
    online = n is None or n == "online"
    pool = int(online_pool if online else n)
    if min(N, pool, d) < 1:
        raise ValueError("worker count, sample pool and dimension must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    scale = 1.0 / math.sqrt(d)
    anchor = rng.normal(0.0, scale, size=d)
    targets = anchor[None, :] + heterogeneity * rng.normal(
        0.0, scale, size=(N, d)
    )
    features = rng.uniform(-1.0, 1.0, size=(N, pool, d)) * scale
    offsets = np.einsum("wpd,wd->wp", features, targets) + rng.uniform(
        -0.2, 0.2, size=(N, pool)
    )
    initial_point = anchor + rng.normal(0.0, scale, size=d)
    config = {
        "family": "sigmoid",
        "N": N,
        "n": "online" if online else int(n),
        "d": d,
        "heterogeneity": heterogeneity,
        "seed": seed,
        "online_pool": online_pool,
    }
    return _finish_sigmoid_suite(features, offsets, initial_point, online, config)


def sigmoid_suite_from_params(
    features, offsets, initial_point, online: bool = False
) -> ProblemSuite:
    """Sigmoid suite over explicit per-worker (features, offsets) arrays."""
    features = np.asarray(features, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    if features.ndim != 3:
        raise ValueError("features must have shape (N, n, d)")
    config = {
        "family": "sigmoid-explicit",
        "features": features.tolist(),
        "offsets": offsets.tolist(),
        "initial_point": list(map(float, np.asarray(initial_point))),
        "online": online,
    }
    return _finish_sigmoid_suite(
        features, offsets, as_vector(initial_point), online, config
    )
