"""Algorithm runners and the hyperparameter derivation rules.

All runners are bulk-synchronous: within one inner iteration the N worker
updates are independent (and may execute on a thread pool), barriers and
metrics run on the coordinator between them. Runners never mutate the
suite they are given; each run works on a private copy, so repeated and
concurrent runs over one suite object are safe.

``run_pr_spider_finite`` restarts every epoch from exact local full
gradients averaged at the server; ``run_pr_spider_online`` replaces those
with size-``n_b`` batch gradients. Both share the inner loop: a recursive
estimator step per worker, iterate/direction averaging every ``I``
iterations, and a local move per iteration. The baselines are plain
distributed SGD with iterate averaging every iteration
(``run_parallel_minibatch_sgd``) or every ``I`` iterations
(``run_parallel_restarted_sgd``).
"""

from __future__ import annotations

import copy
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .estimator import EstimatorState, is_averaging_step, spider_update
from .harness import (
    CommLedger,
    MetricsTrace,
    RunHooks,
    WorkerState,
    make_record,
    sync_round,
)
from .numerics import (
    DRAW_INIT,
    DRAW_INNER,
    DRAW_RESTART,
    ParamVector,
    RngStream,
    axpy,
    mean_reduce,
    sq_norm,
)
from .problems import ProblemSuite, UnsupportedOperationError

__all__ = [
    "HyperParams",
    "DivergedError",
    "choose_params_finite",
    "choose_params_online",
    "run_pr_spider_finite",
    "run_pr_spider_online",
    "run_parallel_minibatch_sgd",
    "run_parallel_restarted_sgd",
    "draw_restart_direction",
]


class DivergedError(RuntimeError):
    """A run produced non-finite values; carries the trace so far."""

    def __init__(self, message: str, trace: MetricsTrace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class HyperParams:
    """Run-shape parameters: step size, periods, batch sizes, worker count.

    ``n_b`` is the restart batch size and only meaningful for the online
    variant. ``horizon`` is the total inner-iteration budget ``S * m``.
    """

    gamma: float
    I: int
    m: int
    B: int
    S: int
    N: int
    n_b: int | None = None

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma >= 0.0):
            raise ValueError("step size must be finite and nonnegative")
        for name in ("I", "m", "B", "S", "N"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.n_b is not None and self.n_b < 1:
            raise ValueError("n_b must be at least 1")

    @property
    def horizon(self) -> int:
        return self.S * self.m

    def as_dict(self) -> dict:
        d = {
            "gamma": self.gamma,
            "I": self.I,
            "m": self.m,
            "B": self.B,
            "S": self.S,
            "N": self.N,
        }
        if self.n_b is not None:
            d["n_b"] = self.n_b
        return d


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _ceil_guarded(x: float) -> int:
    # absorb float noise just above an integer before taking the ceiling
    return int(math.ceil(x * (1.0 - 1e-12)))


def step_size_rule(L: float, I: int) -> float:
    """Largest step size the convergence analysis permits: 1 / (8 L I)."""
    if L <= 0:
        raise ValueError("smoothness modulus must be positive")
    return 1.0 / (8.0 * L * I)


def choose_params_finite(
    N: int, n: int, I: int, L: float, gap_bound: float, eps: float
) -> HyperParams:
    """Derive the finite-sum run shape for a target accuracy ``eps``.

    Epoch length ``m = I * sqrt(N n)`` and inner batch
    ``B = sqrt(n / N) / I`` (both rounded half-up and clamped to valid
    integers, with B capped at n); step size from the 1/(8 L I) rule; the
    horizon covers ``2 * gap_bound / (gamma * eps)`` iterations. Rounding
    always errs toward more computation.
    """
    if min(N, n, I) < 1 or eps <= 0 or gap_bound < 0:
        raise ValueError("invalid parameter-rule inputs")
    m = max(1, _round_half_up(I * math.sqrt(N * n)))
    B = min(n, max(1, _round_half_up(math.sqrt(n / N) / I)))
    gamma = step_size_rule(L, I)
    T = max(1, _ceil_guarded(2.0 * gap_bound / (gamma * eps)))
    S = max(1, _ceil_guarded(T / m))
    return HyperParams(gamma=gamma, I=I, m=m, B=B, S=S, N=N)


def choose_params_online(
    N: int, sigma: float, I: int, L: float, gap_bound: float, eps: float
) -> HyperParams:
    """Online analogue: restart batch ``n_b = 4 sigma^2 / (N eps)``.

    The remaining quantities follow the finite-sum rule with ``n``
    replaced by ``n_b``.
    """
    if N < 1 or I < 1 or eps <= 0 or sigma < 0 or gap_bound < 0:
        raise ValueError("invalid parameter-rule inputs")
    n_b = max(1, _ceil_guarded(4.0 * sigma**2 / (N * eps)))
    base = choose_params_finite(N, n_b, I, L, gap_bound, eps)
    return replace(base, n_b=n_b)


def draw_restart_direction(
    suite: ProblemSuite,
    x: ParamVector,
    n_b: int,
    rng: RngStream,
    epoch: int,
    iteration: int,
    purpose: int = DRAW_RESTART,
) -> list[ParamVector]:
    """Per-worker batch gradients of size ``n_b`` at a common point.

    Each worker draws its own independent batch; every worker's counter
    increases by exactly ``n_b``. The caller averages via a gradient round.
    """
    vectors = []
    for i, obj in enumerate(suite.objectives):
        gen = rng.substream(i, epoch, iteration, purpose)
        idx = obj.draw_indices(gen, n_b)
        vectors.append(obj.batch_gradient_mean(x, idx))
    return vectors


def _check_finite(workers, s, t, build_partial):
    for w in workers:
        bad_x = not np.all(np.isfinite(w.x))
        bad_v = w.est is not None and not np.all(np.isfinite(w.est.v))
        if bad_x or bad_v:
            raise DivergedError(
                f"non-finite values at worker {w.worker_id}, epoch {s}, "
                f"iteration {t}",
                build_partial(),
            )


def _map_workers(pool, fn, workers):
    # results are applied in worker-index order either way, so scheduling
    # cannot change the outcome
    if pool is None:
        return [fn(w) for w in workers]
    return list(pool.map(fn, workers))


def _run_spider(
    suite: ProblemSuite,
    hp: HyperParams,
    seed: int,
    *,
    online: bool,
    metrics_every: int,
    parallel: bool,
    hooks: RunHooks | None,
    skip_epoch_restart: bool,
) -> MetricsTrace:
    if hp.N != suite.num_workers:
        raise ValueError(
            f"hyperparams expect {hp.N} workers, suite has {suite.num_workers}"
        )
    if online:
        if hp.n_b is None:
            raise ValueError("online variant needs a restart batch size n_b")
    elif not suite.is_finite_sum:
        raise UnsupportedOperationError(
            "finite-sum variant needs enumerable samples; use the online one"
        )
    if metrics_every < 1:
        raise ValueError("metrics_every must be at least 1")
    hooks = hooks or RunHooks()

    suite = copy.deepcopy(suite)
    suite.reset_counters()
    rng = RngStream(seed)
    ledger = CommLedger()
    breakdown = {"init": 0, "inner": 0, "refresh": 0}
    x0 = suite.initial_point
    workers = [
        WorkerState(worker_id=i, obj=obj, x=x0.copy(), rng=rng)
        for i, obj in enumerate(suite.objectives)
    ]

    algo = "pr-spider-online" if online else "pr-spider-finite"
    echo = {
        "problem": dict(suite.config),
        "algorithm": {"name": algo, "params": hp.as_dict()},
        "run": {
            "seeds": [seed],
            "metrics_every": metrics_every,
            "parallel": parallel,
        },
    }
    records: list = []
    residuals: list[float] = []

    def build_partial() -> MetricsTrace:
        return MetricsTrace(
            records=records,
            config_echo=echo,
            seed=seed,
            outcome="diverged",
            ledger=ledger,
            ifo_breakdown=breakdown,
            epoch_restart_residuals=residuals,
        )

    pool = ThreadPoolExecutor(max_workers=hp.N) if parallel and hp.N > 1 else None
    # float overflow is a detected failure mode here, not a warning
    errstate = np.errstate(over="ignore", invalid="ignore")
    try:
        errstate.__enter__()
        # initial direction: exact local full gradients (finite-sum) or
        # per-worker restart batches (online), averaged in one round
        if online:
            grads = draw_restart_direction(
                suite, x0, hp.n_b, rng, epoch=0, iteration=0, purpose=DRAW_INIT
            )
            breakdown["init"] += hp.N * hp.n_b
        else:
            grads = [w.obj.full_gradient(w.x) for w in workers]
            breakdown["init"] += hp.N * suite.sample_count
        sync_round(workers, "gradients", ledger, gradients=grads)

        for s in range(hp.S):
            for w in workers:
                w.epoch = s
                w.t = 0
                w.est = replace(w.est, x_prev=w.x, t=0)
            if hooks.on_epoch_start:
                hooks.on_epoch_start(s, workers)
            residuals.append(_restart_residual(suite, workers))

            for t in range(hp.m):
                for w in workers:
                    w.t = t
                if t >= 1:
                    def one_step(w, _s=s, _t=t):
                        gen = rng.substream(w.worker_id, _s, _t, DRAW_INNER)
                        return spider_update(w.est, w.obj, w.x, hp.B, gen)

                    for w, est in zip(workers, _map_workers(pool, one_step, workers)):
                        w.est = est
                    breakdown["inner"] += 2 * hp.B * hp.N
                    if is_averaging_step(t, hp.I):
                        sync_round(workers, "both", ledger)
                        if hooks.on_sync:
                            hooks.on_sync(s, t, "both", workers)
                if (s * hp.m + t) % metrics_every == 0:
                    records.append(make_record(s, t, suite, workers, ledger))
                if hooks.on_record:
                    hooks.on_record(s, t, workers)
                for w in workers:
                    if t == 0:
                        w.est = replace(w.est, x_prev=w.x)
                    w.x = axpy(w.x, -hp.gamma, w.est.v)
                _check_finite(workers, s, t, build_partial)

            if s < hp.S - 1 and not skip_epoch_restart:
                for w in workers:
                    w.t = hp.m
                sync_round(workers, "iterates", ledger)
                if hooks.on_sync:
                    hooks.on_sync(s, hp.m, "iterates", workers)
                if online:
                    grads = draw_restart_direction(
                        suite, workers[0].x, hp.n_b, rng, epoch=s, iteration=hp.m
                    )
                    breakdown["refresh"] += hp.N * hp.n_b
                else:
                    grads = [w.obj.full_gradient(w.x) for w in workers]
                    breakdown["refresh"] += hp.N * suite.sample_count
                sync_round(workers, "gradients", ledger, gradients=grads)
                if hooks.on_sync:
                    hooks.on_sync(s, hp.m, "gradients", workers)
    finally:
        errstate.__exit__(None, None, None)
        if pool is not None:
            pool.shutdown()

    trace = build_partial()
    trace.outcome = "completed"
    return trace


def _restart_residual(suite: ProblemSuite, workers) -> float:
    """|| mean direction - grad f(mean iterate) || at an epoch start."""
    v_bar = mean_reduce([w.est.v for w in workers])
    x_bar = mean_reduce([w.x for w in workers])
    return math.sqrt(sq_norm(v_bar - suite.gradient(x_bar)))


def run_pr_spider_finite(
    suite: ProblemSuite,
    hp: HyperParams,
    seed: int,
    *,
    metrics_every: int = 1,
    parallel: bool = False,
    hooks: RunHooks | None = None,
    _skip_epoch_restart: bool = False,
) -> MetricsTrace:
    """Epoch-restarted variance-reduced run with exact full-gradient restarts.

    Emits one record per inner iteration (at the default cadence); the
    record at ``(s, t)`` reflects the state after all exchanges scheduled
    at that index, together with the cost counters at that moment.
    ``_skip_epoch_restart`` is a fault-injection hook for the verification
    suite and must stay off in real runs.
    """
    return _run_spider(
        suite,
        hp,
        seed,
        online=False,
        metrics_every=metrics_every,
        parallel=parallel,
        hooks=hooks,
        skip_epoch_restart=_skip_epoch_restart,
    )


def run_pr_spider_online(
    suite: ProblemSuite,
    hp: HyperParams,
    seed: int,
    *,
    metrics_every: int = 1,
    parallel: bool = False,
    hooks: RunHooks | None = None,
) -> MetricsTrace:
    """Online variant: initialization and restarts use size-``n_b`` batches."""
    return _run_spider(
        suite,
        hp,
        seed,
        online=True,
        metrics_every=metrics_every,
        parallel=parallel,
        hooks=hooks,
        skip_epoch_restart=False,
    )


def _run_local_sgd(
    suite: ProblemSuite,
    gamma: float,
    batch: int,
    I: int,
    horizon: int,
    seed: int,
    *,
    name: str,
    metrics_every: int,
    parallel: bool,
    hooks: RunHooks | None,
) -> MetricsTrace:
    if horizon < 1 or batch < 1 or I < 1:
        raise ValueError("horizon, batch and I must be at least 1")
    if not (math.isfinite(gamma) and gamma >= 0.0):
        raise ValueError("step size must be finite and nonnegative")
    if metrics_every < 1:
        raise ValueError("metrics_every must be at least 1")
    hooks = hooks or RunHooks()

    suite = copy.deepcopy(suite)
    suite.reset_counters()
    rng = RngStream(seed)
    ledger = CommLedger()
    breakdown = {"init": 0, "inner": 0, "refresh": 0}
    workers = [
        WorkerState(worker_id=i, obj=obj, x=suite.initial_point.copy(), rng=rng)
        for i, obj in enumerate(suite.objectives)
    ]
    params = {"gamma": gamma, "batch": batch, "horizon": horizon}
    if name == "par-restarted-sgd":
        params["I"] = I
    echo = {
        "problem": dict(suite.config),
        "algorithm": {"name": name, "params": params},
        "run": {
            "seeds": [seed],
            "metrics_every": metrics_every,
            "parallel": parallel,
        },
    }
    records: list = []

    def build_partial() -> MetricsTrace:
        return MetricsTrace(
            records=records,
            config_echo=echo,
            seed=seed,
            outcome="diverged",
            ledger=ledger,
            ifo_breakdown=breakdown,
        )

    pool = ThreadPoolExecutor(max_workers=len(workers)) if parallel and len(workers) > 1 else None
    errstate = np.errstate(over="ignore", invalid="ignore")
    try:
        errstate.__enter__()
        for k in range(horizon):
            for w in workers:
                w.t = k
            if k % metrics_every == 0:
                records.append(make_record(0, k, suite, workers, ledger))
            if hooks.on_record:
                hooks.on_record(0, k, workers)

            def one_step(w, _k=k):
                obj = w.obj
                if obj.is_finite_sum and batch == obj.sample_count:
                    # a batch covering the whole sample set is a full pass
                    idx = np.arange(obj.sample_count)
                else:
                    gen = rng.substream(w.worker_id, 0, _k, DRAW_INNER)
                    idx = obj.draw_indices(gen, batch)
                return axpy(w.x, -gamma, obj.batch_gradient_mean(w.x, idx))

            for w, x_new in zip(workers, _map_workers(pool, one_step, workers)):
                w.x = x_new
            breakdown["inner"] += batch * len(workers)
            _check_finite(workers, 0, k, build_partial)
            if (k + 1) % I == 0 or k + 1 == horizon:
                for w in workers:
                    w.t = k + 1
                sync_round(workers, "iterates", ledger)
                if hooks.on_sync:
                    hooks.on_sync(0, k + 1, "iterates", workers)
    finally:
        errstate.__exit__(None, None, None)
        if pool is not None:
            pool.shutdown()

    trace = build_partial()
    trace.outcome = "completed"
    return trace


def run_parallel_minibatch_sgd(
    suite: ProblemSuite,
    gamma: float,
    batch: int,
    horizon: int,
    seed: int,
    *,
    metrics_every: int = 1,
    parallel: bool = False,
    hooks: RunHooks | None = None,
) -> MetricsTrace:
    """Baseline: local batch step then iterate averaging, every iteration."""
    return _run_local_sgd(
        suite,
        gamma,
        batch,
        1,
        horizon,
        seed,
        name="par-sgd",
        metrics_every=metrics_every,
        parallel=parallel,
        hooks=hooks,
    )


def run_parallel_restarted_sgd(
    suite: ProblemSuite,
    gamma: float,
    batch: int,
    I: int,
    horizon: int,
    seed: int,
    *,
    metrics_every: int = 1,
    parallel: bool = False,
    hooks: RunHooks | None = None,
) -> MetricsTrace:
    """Baseline: local SGD with iterate averaging every ``I`` iterations.

    A trailing average fires at the horizon when it is not aligned with
    ``I``, so the total round count is ``ceil(horizon / I)``; ``I = 1``
    reduces to the parallel mini-batch baseline bitwise, ``I = horizon``
    to one-shot averaging.
    """
    return _run_local_sgd(
        suite,
        gamma,
        batch,
        I,
        horizon,
        seed,
        name="par-restarted-sgd",
        metrics_every=metrics_every,
        parallel=parallel,
        hooks=hooks,
    )
