# SPDX-License-Identifier: MIT

"""
Cores, exception levels, NS-tagged caches, the shared TLB, SMP coherency,
and the EL3 MMU switch.

Every access flows through :func:`mem_access`, which resolves it in this
order:

1. At EL3 with the EL3 MMU off, go straight to the bus: no cache, no
   translation.
2. Translate.  EL3 is identity-mapped but needs a TLB entry; a miss walks
   the EL3 page table in the MONITOR region with a bus read.  S.EL1 uses
   its own mapping table through the shared TLB.  The normal world is
   identity-mapped with NS=1.
3. Look the line up by ``(pa, ns)``: own L1, other cores' L1 while coherency
   is on, then L2.  A hit is served **without** any partition controller
   check; that's where write-to-read-only attacks live.
4. On a miss, issue a bus request: TZASC, then the partition controller.

Caches are write-back and write-allocate.
"""

from __future__ import annotations

import logging

from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Iterator

from ._utils import _check_types
from .ppc import MID_CLUSTER, PpcState, Verdict, ppc_check
from .topology import (
    EL,
    MONITOR,
    PAGE_SIZE,
    Access,
    Kind,
    MemoryLayout,
    RegionKind,
    World,
)
from .trace import Trace


__all__ = [
    "AccessResult",
    "CacheGeometry",
    "CacheLine",
    "ClusterState",
    "CoreState",
    "Fault",
    "FaultKind",
    "MappingEntry",
    "Soc",
    "flush_caches",
    "halt_others",
    "invalidate_region",
    "mem_access",
    "resume_others",
    "set_coherency",
    "tlb_invalidate",
]

_log = logging.getLogger(__name__)

WORD_MASK = 0xFFFF_FFFF_FFFF_FFFF

_REGISTER_FILES = frozenset((Kind.PPC_MMIO, Kind.MU_A, Kind.MU_B))


@dataclass
class CacheGeometry:
    """
    Cluster geometry.

    Attributes:
        cores: Cores in the cluster.

        l1_lines: Lines per private L1 cache.

        l2_lines: Lines in the shared L2 cache.

        tlb_entries: Entries in the TLB shared by EL3 and S.EL1.

        line_size: Bytes per cache line; each line holds one 64-bit word.
    """

    cores: int = 4
    l1_lines: int = 4
    l2_lines: int = 16
    tlb_entries: int = 4
    line_size: int = 16

    def __post_init__(self) -> None:
        names = [f.name for f in fields(self)]
        e = _check_types(**{n: (getattr(self, n), int) for n in names})
        if e:
            raise TypeError(e)
        for n in names:
            if getattr(self, n) < 1:
                msg = f"'{n}' must be at least 1"
                raise ValueError(msg)
        if self.line_size & (self.line_size - 1):
            msg = "'line_size' must be a power of two"
            raise ValueError(msg)


@dataclass(frozen=True)
class MappingEntry:
    """
    A page table entry translating the page at *va* to the page at *pa*
    with the NS bit *ns*.

    The trusted OS may create *any* entry; that's the threat.
    """

    va: int
    pa: int
    ns: int
    writable: bool = True

    def covers(self, va: int) -> bool:
        return self.va // PAGE_SIZE == va // PAGE_SIZE


@dataclass(frozen=True)
class CacheLine:
    pa: int
    ns_tag: int
    data: int
    dirty: bool = False

    @property
    def key(self) -> tuple[int, int]:
        return (self.pa, self.ns_tag)


class Cache:
    """
    A fully associative LRU cache holding at most one line per ``(pa, ns)``.
    """

    __slots__ = ("capacity", "lines")

    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        # Insertion order is LRU order: oldest first.
        self.lines: dict[tuple[int, int], CacheLine] = {}

    def __len__(self) -> int:
        return len(self.lines)

    def __iter__(self) -> Iterator[CacheLine]:
        return iter(list(self.lines.values()))

    def __contains__(self, key: object) -> bool:
        return key in self.lines

    def peek(self, key: tuple[int, int]) -> CacheLine | None:
        return self.lines.get(key)

    def get(self, key: tuple[int, int]) -> CacheLine | None:
        line = self.lines.pop(key, None)
        if line is not None:
            self.lines[key] = line
        return line

    def put(self, line: CacheLine) -> CacheLine | None:
        """
        Insert or refresh *line*; return the evicted victim, if any.
        """
        self.lines.pop(line.key, None)
        victim = None
        if len(self.lines) >= self.capacity:
            victim_key = next(iter(self.lines))
            victim = self.lines.pop(victim_key)
        self.lines[line.key] = line
        return victim

    def drop(self, key: tuple[int, int]) -> CacheLine | None:
        return self.lines.pop(key, None)

    def clear(self) -> None:
        self.lines.clear()

    def fingerprint(self) -> tuple[CacheLine, ...]:
        return tuple(self.lines.values())


@dataclass
class CoreState:
    """
    One application core.

    The token register stands in for ``TPIDR_EL3``: only EL3 code can read
    or write it.
    """

    id: int
    l1: Cache
    el: EL = EL.EL1
    world: World = World.NORMAL
    el3_mmu_on: bool = True
    s1_mappings: list[MappingEntry] = field(default_factory=list)
    halted: bool = False
    _token_reg: int = field(default=0, repr=False)

    def read_token_reg(self) -> int | Fault:
        if self.el is not EL.EL3:
            return Fault(FaultKind.TRAP, "TPIDR_EL3 read below EL3")
        return self._token_reg

    def write_token_reg(self, value: int) -> Fault | None:
        if self.el is not EL.EL3:
            return Fault(FaultKind.TRAP, "TPIDR_EL3 write below EL3")
        self._token_reg = value & WORD_MASK
        return None

    def fingerprint(self) -> tuple[object, ...]:
        return (
            self.el,
            self.world,
            self.el3_mmu_on,
            tuple(self.s1_mappings),
            self.halted,
            self.l1.fingerprint(),
        )


@dataclass
class ClusterState:
    """
    The application cluster.

    The TLB is shared: S.EL1 entries (keyed ``("s1", va_page)``) carry no
    zone id because the hardware can't tell zones apart; EL3 entries are
    keyed ``("el3", page)``.
    """

    cores: list[CoreState]
    l2: Cache
    tlb_entries: int
    tlb: dict[tuple[str, int], MappingEntry] = field(default_factory=dict)
    coherency_on: bool = True
    last_zone: int | None = None

    @property
    def s1_tlb(self) -> list[MappingEntry]:
        return [e for (regime, _), e in self.tlb.items() if regime == "s1"]

    def tlb_lookup(self, key: tuple[str, int]) -> MappingEntry | None:
        entry = self.tlb.pop(key, None)
        if entry is not None:
            self.tlb[key] = entry
        return entry

    def tlb_fill(self, key: tuple[str, int], entry: MappingEntry) -> None:
        self.tlb.pop(key, None)
        if len(self.tlb) >= self.tlb_entries:
            del self.tlb[next(iter(self.tlb))]
        self.tlb[key] = entry

    def fingerprint(self) -> tuple[object, ...]:
        return (
            tuple(c.fingerprint() for c in self.cores),
            self.l2.fingerprint(),
            tuple(self.tlb.items()),
            self.coherency_on,
            self.last_zone,
        )


class FaultKind(Enum):
    TZASC = "TZASC"
    PPC = "PPC"
    UNMAPPED = "Unmapped"
    TLB_WALK_BLOCKED = "TLBWalkBlocked"
    PERMISSION = "Permission"
    TRAP = "Trap"


@dataclass(frozen=True)
class Fault:
    kind: FaultKind
    detail: str = ""

    def __str__(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class AccessResult:
    """
    Outcome of :func:`mem_access`.

    Attributes:
        value: The word read, or written.

        fault: Set if the access faulted.

        silent_cache_write:
            A write that landed in a cache line although the bus would have
            denied it; main memory is unchanged.

        hit: Whether a cache served the access.

        pa: The physical address after translation.

        region: The region the access targeted.
    """

    value: int | None = None
    fault: Fault | None = None
    silent_cache_write: bool = False
    hit: bool = False
    pa: int | None = None
    region: RegionKind | None = None

    @property
    def ok(self) -> bool:
        return self.fault is None


class Soc:
    """
    Everything bus-reachable: layout, partition controller, backing memory,
    and the cluster, plus the trace all of them write to.

    Attributes:
        active_zone:
            The zone whose row is in force for the whole cluster, if any.
    """

    def __init__(
        self,
        layout: MemoryLayout,
        geometry: CacheGeometry,
        trace: Trace | None = None,
    ) -> None:
        self.layout = layout
        self.geometry = geometry
        self.trace = trace if trace is not None else Trace()
        self.ppc = PpcState()
        self.memory: dict[int, int] = {}
        self.active_zone: int | None = None
        self.cluster = ClusterState(
            cores=[
                CoreState(id=i, l1=Cache(geometry.l1_lines))
                for i in range(geometry.cores)
            ],
            l2=Cache(geometry.l2_lines),
            tlb_entries=geometry.tlb_entries,
        )

    @property
    def page_table_addr(self) -> int:
        """
        Where the EL3 translation table lives.
        """
        return self.layout[MONITOR].start

    def line_of(self, pa: int) -> int:
        return pa & ~(self.geometry.line_size - 1)

    def load(self, pa: int) -> int:
        return self.memory.get(self.line_of(pa), 0)

    def store(self, pa: int, value: int) -> None:
        self.memory[self.line_of(pa)] = value & WORD_MASK

    def bus(
        self,
        pa: int,
        ns: int,
        access: Access,
        world: World,
        mid: int = MID_CLUSTER,
    ) -> Fault | None:
        """
        Check a bus request: TZASC by NS bit and world, then the partition
        controller by bus master.
        """
        region = self.layout.region_of(pa)
        if region is None:
            return Fault(FaultKind.UNMAPPED, hex(pa))
        if (ns == 1 and not region.is_non_secure) or (
            ns == 0 and world is World.NORMAL
        ):
            return Fault(FaultKind.TZASC, str(region))
        if (
            ppc_check(self.ppc, mid, region, access, self.trace)
            is Verdict.DENY
        ):
            return Fault(FaultKind.PPC, str(region))

        return None

    def write_back(self, line: CacheLine) -> None:
        """
        Write a dirty line to memory.  Denied write-backs are lost.
        """
        fault = self.bus(line.pa, line.ns_tag, Access.WRITE, World.SECURE)
        region = self.layout.region_of(line.pa)
        self.trace.emit(
            "WRITEBACK",
            pa=line.pa,
            region=str(region),
            verdict="allow" if fault is None else str(fault),
        )
        if fault is None:
            self.store(line.pa, line.data)

    def fingerprint(self) -> tuple[object, ...]:
        return (
            self.ppc.fingerprint(),
            tuple(sorted(self.memory.items())),
            self.active_zone,
            self.cluster.fingerprint(),
        )


def _ns_for(region: RegionKind | None) -> int:
    return 1 if region is not None and region.is_non_secure else 0


def _fill(soc: Soc, core: CoreState, line: CacheLine) -> None:
    victim = core.l1.put(line)
    if victim is not None and victim.dirty and victim.key not in soc.cluster.l2:
        _fill_l2(soc, victim)
    _fill_l2(soc, line)


def _fill_l2(soc: Soc, line: CacheLine) -> None:
    victim = soc.cluster.l2.put(line)
    if victim is not None and victim.dirty:
        soc.write_back(victim)


def _lookup(
    soc: Soc, core: CoreState, key: tuple[int, int]
) -> tuple[CacheLine | None, str]:
    line = core.l1.get(key)
    if line is not None:
        return line, "l1"
    if soc.cluster.coherency_on:
        for other in soc.cluster.cores:
            if other is not core and key in other.l1:
                return other.l1.get(key), "remote"
    line = soc.cluster.l2.get(key)
    if line is not None:
        return line, "l2"

    return None, "miss"


def _write_hit(
    soc: Soc, core: CoreState, key: tuple[int, int], value: int
) -> None:
    pa, ns = key
    line = CacheLine(pa, ns, value & WORD_MASK, dirty=True)
    _fill(soc, core, line)
    if soc.cluster.coherency_on:
        for other in soc.cluster.cores:
            if other is not core:
                other.l1.drop(key)


def _translate(
    soc: Soc, core: CoreState, va: int, access: Access, via_mmu: bool
) -> tuple[int, int] | Fault:
    if core.world is World.NORMAL:
        return va, 1

    if core.el is EL.EL3:
        if via_mmu:
            page = va // PAGE_SIZE
            if soc.cluster.tlb_lookup(("el3", page)) is None:
                pt = soc.page_table_addr
                fault = soc.bus(pt, 0, Access.READ, World.SECURE)
                soc.trace.emit(
                    "TLB_WALK",
                    core=core.id,
                    pa=pt,
                    verdict="allow" if fault is None else str(fault),
                )
                if fault is not None:
                    return Fault(FaultKind.TLB_WALK_BLOCKED, hex(va))
                base = page * PAGE_SIZE
                soc.cluster.tlb_fill(
                    ("el3", page), MappingEntry(base, base, 0)
                )
        return va, _ns_for(soc.layout.region_of(va))

    page = va // PAGE_SIZE
    entry = soc.cluster.tlb_lookup(("s1", page))
    if entry is None:
        for candidate in reversed(core.s1_mappings):
            if candidate.covers(va):
                entry = candidate
                break
        else:
            return Fault(FaultKind.UNMAPPED, f"no mapping for {va:#x}")
        soc.cluster.tlb_fill(("s1", page), entry)
    if access is Access.WRITE and not entry.writable:
        return Fault(FaultKind.PERMISSION, f"{va:#x} is read-only")

    return entry.pa + va % PAGE_SIZE, entry.ns


def mem_access(
    soc: Soc,
    core_id: int,
    addr: int,
    access: Access,
    via_mmu: bool = True,
    value: int = 0,
    *,
    fetch: bool = False,
) -> AccessResult:
    """
    Perform one load, store, or instruction fetch on core *core_id*.

    Args:
        addr: Virtual address (physical at EL3 and in the normal world).

        via_mmu:
            Whether the access goes through the MMU.  At EL3 with the EL3
            MMU off, it bypasses the caches.

        value: Word to store.

        fetch: Marks instruction fetches in the trace.

    Raises:
        ValueError: If the core is halted.
    """
    core = soc.cluster.cores[core_id]
    if core.halted:
        msg = f"core {core_id} is halted"
        raise ValueError(msg)

    def record(
        pa: int | None,
        ns: int | None,
        region: RegionKind | None,
        hit: str,
        result: AccessResult,
    ) -> AccessResult:
        soc.trace.emit(
            "MEM",
            core=core_id,
            el=int(core.el),
            world=core.world.value,
            zone=soc.active_zone,
            va=addr,
            pa=pa,
            ns=ns,
            region=None if region is None else str(region),
            access=access.value,
            fetch=fetch,
            hit=hit,
            verdict="allow" if result.fault is None else str(result.fault),
            value=result.value,
        )
        return result

    def via_bus(pa: int, ns: int, region: RegionKind) -> AccessResult:
        fault = soc.bus(pa, ns, access, core.world)
        if fault is not None:
            return AccessResult(fault=fault, pa=pa, region=region)
        if region.tag in _REGISTER_FILES:
            # Writes are consumed by the device; nothing reads back.
            if access is Access.READ:
                return AccessResult(value=0, pa=pa, region=region)
        elif access is Access.READ:
            return AccessResult(value=soc.load(pa), pa=pa, region=region)
        else:
            soc.store(pa, value)
        return AccessResult(value=value & WORD_MASK, pa=pa, region=region)

    if core.el is EL.EL3 and via_mmu and not core.el3_mmu_on:
        region = soc.layout.region_of(addr)
        ns = _ns_for(region)
        if region is None:
            res = AccessResult(fault=Fault(FaultKind.UNMAPPED, hex(addr)))
        else:
            res = via_bus(addr, ns, region)
        return record(addr, ns, region, "uncached", res)

    translated = _translate(soc, core, addr, access, via_mmu)
    if isinstance(translated, Fault):
        return record(None, None, None, "none", AccessResult(fault=translated))
    pa, ns = translated
    region = soc.layout.region_of(pa)
    if region is None:
        res = AccessResult(fault=Fault(FaultKind.UNMAPPED, hex(pa)), pa=pa)
        return record(pa, ns, None, "none", res)
    if region.is_device:
        return record(pa, ns, region, "uncached", via_bus(pa, ns, region))

    key = (soc.line_of(pa), ns)
    line, where = _lookup(soc, core, key)
    if line is not None:
        if access is Access.READ:
            if where != "l1":
                _fill(soc, core, line)
            res = AccessResult(
                value=line.data, hit=True, pa=pa, region=region
            )
        else:
            would_deny = not any(
                soc.ppc.perm(d, region).allows(access)
                for d in soc.ppc.bindings.get(MID_CLUSTER, frozenset())
            )
            _write_hit(soc, core, key, value)
            res = AccessResult(
                value=value & WORD_MASK,
                hit=True,
                silent_cache_write=would_deny,
                pa=pa,
                region=region,
            )
        return record(pa, ns, region, where, res)

    fault = soc.bus(pa, ns, access, core.world)
    if fault is not None:
        return record(
            pa, ns, region, "miss", AccessResult(fault=fault, pa=pa, region=region)
        )
    if access is Access.READ:
        data = soc.load(pa)
        _fill(soc, core, CacheLine(key[0], ns, data))
        res = AccessResult(value=data, pa=pa, region=region)
    else:
        _write_hit(soc, core, key, value)
        res = AccessResult(value=value & WORD_MASK, pa=pa, region=region)

    return record(pa, ns, region, "miss", res)


def flush_caches(soc: Soc, core_id: int) -> int:
    """
    Clean and invalidate *core_id*'s L1 and the shared L2.

    Dirty lines are written back through the bus, so this must run before
    the zone row restricts the cluster.

    Returns:
        The number of distinct lines written back or invalidated.
    """
    core = soc.cluster.cores[core_id]
    l2 = soc.cluster.l2
    newest: dict[tuple[int, int], CacheLine] = {}
    for line in l2:
        newest[line.key] = line
    for line in core.l1:
        prev = newest.get(line.key)
        newest[line.key] = replace(
            line, dirty=line.dirty or (prev is not None and prev.dirty)
        )

    for line in newest.values():
        if line.dirty:
            soc.write_back(line)
    core.l1.clear()
    l2.clear()

    soc.trace.emit("FLUSH", core=core_id, lines=len(newest))
    _log.debug("core %d flushed %d lines", core_id, len(newest))

    return len(newest)


def invalidate_region(soc: Soc, kind: RegionKind) -> int:
    """
    Drop every cached line of *kind*'s region from every cache, without
    writing anything back.

    Returns:
        The number of lines dropped.
    """
    region = soc.layout[kind]
    dropped = 0
    for cache in [c.l1 for c in soc.cluster.cores] + [soc.cluster.l2]:
        for line in cache:
            if line.pa in region:
                cache.drop(line.key)
                dropped += 1

    soc.trace.emit("INVALIDATE", region=str(kind), lines=dropped)

    return dropped


def tlb_invalidate(soc: Soc) -> None:
    """
    Invalidate every S.EL1 TLB entry.
    """
    stale = [k for k in soc.cluster.tlb if k[0] == "s1"]
    for k in stale:
        del soc.cluster.tlb[k]

    soc.trace.emit("TLBI", entries=len(stale))


def set_coherency(soc: Soc, on: bool) -> None:
    soc.cluster.coherency_on = on
    soc.trace.emit("COHERENCY", on=on)


def halt_others(
    soc: Soc, except_core: int, *, spare: frozenset[int] = frozenset()
) -> list[int]:
    """
    Halt every running core but *except_core*.

    Halted cores keep their state and continuation and issue no accesses.
    Cores in *spare* are asleep: the halting IPI doesn't reach them.

    Returns:
        The ids of the cores that were halted.
    """
    halted = []
    for core in soc.cluster.cores:
        if core.id != except_core and core.id not in spare and not core.halted:
            core.halted = True
            halted.append(core.id)
            soc.trace.emit("HALTED", core=core.id)

    return halted


def resume_others(soc: Soc, cores: list[int] | None = None) -> None:
    """
    Resume *cores*, or every halted core.
    """
    for core in soc.cluster.cores:
        if core.halted and (cores is None or core.id in cores):
            core.halted = False
            soc.trace.emit("RESUMED", core=core.id)
