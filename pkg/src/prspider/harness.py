"""Simulated worker-server fabric: barriers, metering, metrics, traces.

One communication round is one synchronized exchange event, whatever rides
in it; ``bytes_equivalent`` tracks the number of d-vectors actually
shipped so the finer-grained volume stays reportable. Metrics come from
the analytic suite oracles and charge neither oracle calls nor rounds.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .estimator import EstimatorState
from .numerics import ParamVector, RngStream, mean_reduce, sq_norm
from .problems import LocalObjective, ProblemSuite

__all__ = [
    "BarrierError",
    "CommLedger",
    "WorkerState",
    "MetricsRecord",
    "MetricsTrace",
    "FirstHit",
    "RunHooks",
    "sync_round",
    "evaluate_fos",
    "first_hit",
    "CSV_HEADER",
    "read_trace_csv",
]

PAYLOADS = ("iterates", "estimates", "both", "gradients")

CSV_HEADER = "s,t,f_bar,grad_sq,consensus,fos,ifo_total,comm_rounds"


class BarrierError(RuntimeError):
    """Workers reached a synchronization point out of step."""


@dataclass
class CommLedger:
    """Exact communication tally.

    ``rounds`` counts synchronized exchange events; ``bytes_equivalent``
    counts the d-vectors shipped (two when iterates and directions ride
    the same barrier).
    """

    rounds: int = 0
    bytes_equivalent: int = 0


@dataclass
class WorkerState:
    """One worker: iterate, estimator, objective, and barrier clock."""

    worker_id: int
    obj: LocalObjective
    x: ParamVector
    est: EstimatorState | None = None
    t: int = 0
    epoch: int = 0
    rng: RngStream | None = None

    @property
    def ifo_count(self) -> int:
        return self.obj.ifo_count

    @property
    def v(self) -> ParamVector | None:
        return self.est.v if self.est is not None else None


@dataclass(frozen=True)
class MetricsRecord:
    """Per-iteration metrics plus the cumulative cost counters."""

    s: int
    t: int
    f_bar: float
    grad_sq: float
    consensus: float
    fos: float
    ifo_total: int
    comm_rounds: int


@dataclass(frozen=True)
class FirstHit:
    """Earliest record at which the stationarity measure fell below eps."""

    s: int
    t: int
    ifo_total: int
    comm_rounds: int
    record_index: int


@dataclass
class RunHooks:
    """Optional observation callbacks; must not mutate run state.

    ``on_record(s, t, workers)`` fires at each metrics point,
    ``on_sync(s, t, payload, workers)`` after each broadcast, and
    ``on_epoch_start(s, workers)`` once per epoch after the restart
    direction is in place.
    """

    on_record: Callable | None = None
    on_sync: Callable | None = None
    on_epoch_start: Callable | None = None


@dataclass
class MetricsTrace:
    """Ordered records plus everything needed to rerun the experiment."""

    records: list[MetricsRecord]
    config_echo: dict
    seed: int
    outcome: str  # "completed" | "diverged"
    ledger: CommLedger = field(default_factory=CommLedger)
    ifo_breakdown: dict = field(default_factory=dict)
    epoch_restart_residuals: list[float] = field(default_factory=list)

    @property
    def ifo_total(self) -> int:
        return sum(self.ifo_breakdown.values())

    @property
    def comm_rounds(self) -> int:
        return self.ledger.rounds

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.records:
            lines.append(
                f"{r.s},{r.t},{r.f_bar!r},{r.grad_sq!r},{r.consensus!r},"
                f"{r.fos!r},{r.ifo_total},{r.comm_rounds}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def sidecar(self) -> dict:
        """Reloadable config plus run results; run keys stay at top level."""
        doc = dict(self.config_echo)
        doc["result"] = {
            "outcome": self.outcome,
            "seed": self.seed,
            "comm_rounds": self.ledger.rounds,
            "bytes_equivalent": self.ledger.bytes_equivalent,
            "ifo_total": self.ifo_total,
            "ifo_breakdown": dict(self.ifo_breakdown),
            # inner steps cost two oracle accesses per sample; the
            # B-normalized view counts them once
            "ifo_total_pair_normalized": self.ifo_breakdown.get("init", 0)
            + self.ifo_breakdown.get("refresh", 0)
            + self.ifo_breakdown.get("inner", 0) // 2,
            "records": len(self.records),
            "epoch_restart_residuals": list(self.epoch_restart_residuals),
        }
        return doc

    def write_sidecar(self, path) -> None:
        Path(path).write_text(json.dumps(self.sidecar(), indent=2) + "\n")


def read_trace_csv(path) -> list[MetricsRecord]:
    lines = Path(path).read_text().strip().split("\n")
    if lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected trace header: {lines[0]!r}")
    records = []
    for line in lines[1:]:
        parts = line.split(",")
        records.append(
            MetricsRecord(
                s=int(parts[0]),
                t=int(parts[1]),
                f_bar=float(parts[2]),
                grad_sq=float(parts[3]),
                consensus=float(parts[4]),
                fos=float(parts[5]),
                ifo_total=int(parts[6]),
                comm_rounds=int(parts[7]),
            )
        )
    return records


def sync_round(
    workers: Sequence[WorkerState],
    payload: str,
    ledger: CommLedger,
    gradients: Sequence[ParamVector] | None = None,
):
    """One synchronized worker->server->worker exchange.

    Averages the requested payload in worker-index order, overwrites each
    worker's copy with the broadcast value, and counts one round. The
    ``gradients`` payload averages caller-supplied vectors into the
    estimator direction (the epoch-restart exchange).
    """
    if not workers:
        raise ValueError("sync_round needs at least one worker")
    if payload not in PAYLOADS:
        raise ValueError(f"unknown payload {payload!r}")
    clock = (workers[0].t, workers[0].epoch)
    for w in workers[1:]:
        if (w.t, w.epoch) != clock:
            raise BarrierError(
                f"worker {w.worker_id} at (t={w.t}, epoch={w.epoch}), "
                f"expected {clock}"
            )

    x_bar = None
    v_bar = None
    if payload in ("iterates", "both"):
        x_bar = mean_reduce([w.x for w in workers])
    if payload in ("estimates", "both"):
        v_bar = mean_reduce([w.est.v for w in workers])
    if payload == "gradients":
        if gradients is None:
            raise ValueError("gradients payload needs the vectors to average")
        v_bar = mean_reduce(list(gradients))

    for w in workers:
        if x_bar is not None:
            w.x = x_bar.copy()
            if w.est is not None:
                # averaging overwrites the iterate, so the estimator's
                # reference point must follow it
                w.est = dataclasses.replace(w.est, x_prev=w.x)
        if v_bar is not None:
            if w.est is None:
                w.est = EstimatorState(v=v_bar.copy(), x_prev=w.x, t=0)
            else:
                w.est = dataclasses.replace(w.est, v=v_bar.copy())

    ledger.rounds += 1
    ledger.bytes_equivalent += 2 if payload == "both" else 1
    if payload == "iterates":
        return x_bar
    if payload == "both":
        return x_bar, v_bar
    return v_bar


def evaluate_fos(
    suite: ProblemSuite, workers: Sequence[WorkerState]
) -> tuple[float, float, float]:
    """(f(x_bar), ||grad f(x_bar)||^2, mean squared consensus deviation).

    Uses the analytic oracles only: no oracle charge, no round charge.
    """
    x_bar = mean_reduce([w.x for w in workers])
    grad_sq = sq_norm(suite.gradient(x_bar))
    consensus = 0.0
    for w in workers:
        consensus += sq_norm(w.x - x_bar)
    consensus /= len(workers)
    return suite.value(x_bar), grad_sq, consensus


def make_record(
    s: int,
    t: int,
    suite: ProblemSuite,
    workers: Sequence[WorkerState],
    ledger: CommLedger,
) -> MetricsRecord:
    f_bar, grad_sq, consensus = evaluate_fos(suite, workers)
    # opportunistic certificate: the advertised optimum is a true lower
    # bound wherever the run actually goes (NaN falls through to the
    # divergence check)
    slack = 1e-9 * max(1.0, abs(suite.optimum_value))
    if f_bar < suite.optimum_value - slack:
        raise RuntimeError(
            f"objective {f_bar} below certified optimum {suite.optimum_value}"
        )
    return MetricsRecord(
        s=s,
        t=t,
        f_bar=f_bar,
        grad_sq=grad_sq,
        consensus=consensus,
        fos=grad_sq + consensus,
        ifo_total=suite.total_ifo(),
        comm_rounds=ledger.rounds,
    )


def first_hit(trace_or_records, eps: float) -> FirstHit | None:
    """Earliest record whose stationarity measure is at most ``eps``.

    ``eps = 0`` is allowed and generically returns ``None`` on stochastic
    runs (an exact zero is a measure-zero event).
    """
    if not (eps >= 0.0):
        raise ValueError("eps must be nonnegative")
    records = getattr(trace_or_records, "records", trace_or_records)
    for k, r in enumerate(records):
        if r.fos <= eps:
            return FirstHit(
                s=r.s,
                t=r.t,
                ifo_total=r.ifo_total,
                comm_rounds=r.comm_rounds,
                record_index=k,
            )
    return None
