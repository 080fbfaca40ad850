# SPDX-License-Identifier: MIT

"""
Operation-count cost accounting over traces.

Weights are unit costs per event, not time.  Only orderings and
decompositions are meaningful: an isolated deployment costs more than the
baseline, batching amortizes world switches, and so on.
"""

from __future__ import annotations

import csv
import io
import logging

from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Mapping, Sequence

from ._utils import _check_types
from .adversary import two_zones
from .monitor import Deployment, SimConfig, Simulator
from .programs import Irq, Program, Smc, Work
from .trace import Trace, TraceEvent
from .zones import ZoneManifest


__all__ = [
    "ACU_SLOWDOWN",
    "ComparisonRow",
    "ComparisonTable",
    "CostBreakdown",
    "CostWeights",
    "Workload",
    "account",
    "compare",
    "workloads",
]

_log = logging.getLogger(__name__)

ACU_SLOWDOWN = 5.6
"""
How much slower the gatekeeper's core is clocked than the cluster.
"""

_BUCKETS = {
    "SYNC_HALT": "sync",
    "RESUME": "sync",
    "IDLE": "dispatch",
    "IN_ZONE": "zone",
}


@dataclass
class CostWeights:
    """
    Unit costs.  All of them must be non-negative.

    Attributes:
        cache_line_flush: Per line cleaned and invalidated at step A.

        tlb_invalidate: Per TLB invalidation.

        mq_roundtrip: Per gatekeeper reply.

        uncached_fetch: Per EL3 instruction fetch that misses every cache.

        ppc_config_write: Per applied partition controller write by EL3.

        context_save_restore: Per register context saved or restored.

        zone_work: Per unit of computation.
    """

    cache_line_flush: float = 1.0
    tlb_invalidate: float = 1.0
    mq_roundtrip: float = ACU_SLOWDOWN
    uncached_fetch: float = 1.0
    ppc_config_write: float = 1.0
    context_save_restore: float = 1.0
    zone_work: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            e = _check_types(**{f.name: (value, (int, float))})
            if e:
                raise TypeError(e)
            if value < 0:
                msg = f"'{f.name}' must not be negative (got {value})"
                raise ValueError(msg)

    @classmethod
    def units(cls) -> CostWeights:
        """
        Every weight 1.
        """
        return cls(mq_roundtrip=1.0)


@dataclass(frozen=True)
class CostBreakdown:
    """
    Attributes:
        by_phase:
            Cost per protocol phase: ``A`` through ``F`` (``C'``, ``D'``,
            ``E'`` on exit), ``sync``, ``dispatch``, ``zone``, and ``BOOT``.

        by_kind: Cost per weight name.

        total: The sum of *by_phase*, and equally of *by_kind*.
    """

    by_phase: Mapping[str, float] = field(default_factory=dict)
    by_kind: Mapping[str, float] = field(default_factory=dict)
    total: float = 0.0


def _charge(e: TraceEvent, w: CostWeights) -> tuple[str, float] | None:
    if e.kind == "FLUSH":
        return "cache_line_flush", w.cache_line_flush * e["lines"]
    if e.kind == "TLBI":
        return "tlb_invalidate", w.tlb_invalidate
    if e.kind == "MQ_REPLY":
        return "mq_roundtrip", w.mq_roundtrip
    if e.kind == "MEM" and e["fetch"] and e["hit"] == "uncached":
        return "uncached_fetch", w.uncached_fetch
    if e.kind == "PPC_CONFIG" and e["applied"] and e["requester"] == 0:
        return "ppc_config_write", w.ppc_config_write
    if e.kind == "CTX":
        return "context_save_restore", w.context_save_restore
    if e.kind == "WORK":
        return "zone_work", w.zone_work * e["units"]

    return None


def account(
    trace: Iterable[TraceEvent], weights: CostWeights | None = None
) -> CostBreakdown:
    """
    Sum *weights* over the events of *trace*.
    """
    if weights is None:
        weights = CostWeights()

    by_phase: dict[str, float] = {}
    by_kind: dict[str, float] = {}
    for e in trace:
        charged = _charge(e, weights)
        if charged is None:
            continue
        kind, cost = charged
        phase = _BUCKETS.get(e.phase, e.phase)
        by_phase[phase] = by_phase.get(phase, 0.0) + cost
        by_kind[kind] = by_kind.get(kind, 0.0) + cost

    return CostBreakdown(
        by_phase=by_phase, by_kind=by_kind, total=sum(by_phase.values())
    )


@dataclass(frozen=True)
class Workload:
    """
    Programs to run under every deployment.
    """

    name: str
    programs: Mapping[int, Program]
    zone_bodies: Mapping[int, Program] = field(default_factory=dict)
    zones: Sequence[ZoneManifest] = field(default_factory=two_zones)

    def simulate(self, config: SimConfig) -> Trace:
        sim = Simulator(config, self.zones, self.programs, self.zone_bodies)
        return sim.run().trace


def workloads(n: int = 4) -> dict[str, Workload]:
    """
    The bundled workloads; *n* is the amount of zone work.
    """
    one = {1: Program(ops=(Work(1),)), 2: Program(ops=(Work(1),))}
    return {
        w.name: w
        for w in (
            Workload("idle", {0: Program(ops=(Work(n),))}),
            Workload(
                "batched",
                {0: Program(ops=(Smc(150),))},
                {1: Program(ops=(Work(n),))},
            ),
            Workload("chatty", {0: Program(ops=(Smc(150),) * n)}, one),
            Workload(
                "irq",
                {0: Program(ops=(Smc(150),))},
                {1: Program(ops=(Work(1), Irq(), Work(1)))},
            ),
            Workload("same-zone", {0: Program(ops=(Smc(150), Smc(150)))}, one),
            Workload("cross-zone", {0: Program(ops=(Smc(150), Smc(250)))}, one),
        )
    }


@dataclass(frozen=True)
class ComparisonRow:
    config: str
    breakdown: CostBreakdown
    ratio: float | None

    @property
    def total(self) -> float:
        return self.breakdown.total


@dataclass(frozen=True)
class ComparisonTable:
    """
    Per-deployment totals for one workload.  *ratio* is relative to the
    ``norz`` baseline when it was part of the comparison.
    """

    workload: str
    rows: tuple[ComparisonRow, ...]

    def __getitem__(self, config: str) -> ComparisonRow:
        for r in self.rows:
            if r.config == config:
                return r
        raise KeyError(config)

    def to_records(self) -> list[dict[str, object]]:
        return [
            {
                "workload": self.workload,
                "config": r.config,
                "total": r.total,
                "ratio": r.ratio,
                **{f"phase.{p}": c for p, c in sorted(r.breakdown.by_phase.items())},
            }
            for r in self.rows
        ]

    def to_csv(self) -> str:
        phases = sorted({p for r in self.rows for p in r.breakdown.by_phase})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["workload", "config", "total", "ratio", *phases])
        for r in self.rows:
            w.writerow(
                [
                    self.workload,
                    r.config,
                    f"{r.total:g}",
                    "" if r.ratio is None else f"{r.ratio:.4f}",
                    *(f"{r.breakdown.by_phase.get(p, 0.0):g}" for p in phases),
                ]
            )

        return buf.getvalue()


def compare(
    configs: Iterable[Deployment],
    workload: Workload,
    weights: CostWeights | None = None,
    *,
    base: SimConfig | None = None,
) -> ComparisonTable:
    """
    Run *workload* under each deployment in *configs* and account the
    traces.
    """
    if base is None:
        base = SimConfig()

    breakdowns = {
        d.value: account(
            workload.simulate(replace(base, deployment=d)), weights
        )
        for d in configs
    }
    baseline = breakdowns.get(Deployment.NORZ.value)
    rows = tuple(
        ComparisonRow(
            config=name,
            breakdown=b,
            ratio=(
                b.total / baseline.total
                if baseline is not None and baseline.total
                else None
            ),
        )
        for name, b in breakdowns.items()
    )
    _log.debug(
        "%s: %s",
        workload.name,
        ", ".join(f"{r.config}={r.total:g}" for r in rows),
    )

    return ComparisonTable(workload=workload.name, rows=rows)
