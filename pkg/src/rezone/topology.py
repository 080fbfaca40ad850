# SPDX-License-Identifier: MIT

"""
Physical memory layout, region taxonomy, and the reference permission
matrix.

The matrix in :func:`reference_permission` is a pure oracle.  The enforcing
machinery (:mod:`rezone.ppc` and the TZASC check in :mod:`rezone.cpu`) is
tested against it.
"""

from __future__ import annotations

import bisect

from dataclasses import dataclass, field, fields
from enum import Enum, IntEnum
from typing import TYPE_CHECKING, Iterator, Sequence

from ._utils import _check_types
from .exceptions import DuplicateZoneId, LayoutError, OverlapError


if TYPE_CHECKING:
    from .zones import ZoneManifest


__all__ = [
    "EL",
    "GATEKEEPER",
    "MONITOR",
    "MU_A",
    "MU_B",
    "PAGE_SIZE",
    "PPC_MMIO",
    "REE",
    "SHARED",
    "TRAMPOLINE",
    "Access",
    "AccessContext",
    "Kind",
    "LayoutConfig",
    "MemoryLayout",
    "Permission",
    "Region",
    "RegionKind",
    "World",
    "build_layout",
    "reference_permission",
    "region_of",
]

PAGE_SIZE = 4096


class Kind(Enum):
    """
    Region tags.  ``ZONE`` and ``PERIPHERAL`` carry an index in
    :class:`RegionKind`.
    """

    REE = "REE"
    SHARED = "SHARED"
    MONITOR = "MONITOR"
    TRAMPOLINE = "TRAMPOLINE"
    GATEKEEPER = "GATEKEEPER"
    ZONE = "ZONE"
    PPC_MMIO = "PPC_MMIO"
    MU_A = "MU_A"
    MU_B = "MU_B"
    PERIPHERAL = "PERIPHERAL"


_SINGLETONS = (
    Kind.REE,
    Kind.SHARED,
    Kind.MONITOR,
    Kind.TRAMPOLINE,
    Kind.GATEKEEPER,
    Kind.PPC_MMIO,
    Kind.MU_A,
    Kind.MU_B,
)
_DEVICES = frozenset((Kind.PPC_MMIO, Kind.MU_A, Kind.MU_B, Kind.PERIPHERAL))


@dataclass(frozen=True)
class RegionKind:
    """
    A region's kind.

    Attributes:
        tag: The region tag.

        index:
            Zone id for ``ZONE`` and peripheral id for ``PERIPHERAL`` (both
            dense and 1-based); 0 for every other tag.
    """

    tag: Kind
    index: int = 0

    @classmethod
    def zone(cls, zone_id: int) -> RegionKind:
        return cls(Kind.ZONE, zone_id)

    @classmethod
    def peripheral(cls, periph_id: int) -> RegionKind:
        return cls(Kind.PERIPHERAL, periph_id)

    @property
    def is_device(self) -> bool:
        """
        Device memory is never cached.
        """
        return self.tag in _DEVICES

    @property
    def is_non_secure(self) -> bool:
        """
        Whether the TZASC exposes the region to the normal world.
        """
        return self.tag in (Kind.REE, Kind.SHARED)

    def __str__(self) -> str:
        if self.tag in (Kind.ZONE, Kind.PERIPHERAL):
            return f"{self.tag.value}({self.index})"
        return self.tag.value


REE = RegionKind(Kind.REE)
SHARED = RegionKind(Kind.SHARED)
MONITOR = RegionKind(Kind.MONITOR)
TRAMPOLINE = RegionKind(Kind.TRAMPOLINE)
GATEKEEPER = RegionKind(Kind.GATEKEEPER)
PPC_MMIO = RegionKind(Kind.PPC_MMIO)
MU_A = RegionKind(Kind.MU_A)
MU_B = RegionKind(Kind.MU_B)


class Permission(IntEnum):
    """
    Access permission of a matrix cell, totally ordered ``NA < RO < RW``.
    """

    NA = 0
    RO = 1
    RW = 2

    def allows(self, access: Access) -> bool:
        if access is Access.READ:
            return self >= Permission.RO
        return self is Permission.RW


class Access(Enum):
    READ = "read"
    WRITE = "write"


class World(Enum):
    NORMAL = "NORMAL"
    SECURE = "SECURE"


class EL(IntEnum):
    EL0 = 0
    EL1 = 1
    EL3 = 3


@dataclass(frozen=True)
class AccessContext:
    """
    The execution context selecting a row of the permission matrix.

    An active zone applies to the whole cluster: the partition controller
    can't tell cores apart.
    """

    world: World
    el: EL
    active_zone: int | None = None
    ppc_unlocked_window: bool = False

    def __post_init__(self) -> None:
        if self.el is EL.EL3 and self.world is not World.SECURE:
            msg = "EL3 is always in the secure state"
            raise ValueError(msg)


@dataclass(frozen=True)
class Region:
    start: int
    length: int
    kind: RegionKind

    @property
    def end(self) -> int:
        """
        First address *after* the region.
        """
        return self.start + self.length

    def __contains__(self, addr: object) -> bool:
        return isinstance(addr, int) and self.start <= addr < self.end


@dataclass
class LayoutConfig:
    """
    Sizes used by :func:`build_layout`.

    Attributes:
        address_space: Size of the flat physical address space in bytes.

        ree_size: Normal-world memory.

        shared_size: Memory shared between the normal world and zones.

        trampoline_size: Trampoline code and data, read-only to zones.

        monitor_size: Secure monitor code, data, and EL3 page tables.

        gatekeeper_size: The gatekeeper's private memory.

        device_size: Size of each device window (PPC, MU banks, peripherals).

        device_gap: Unmapped hole between memory and the device windows.

        peripherals: Number of peripherals.
    """

    address_space: int = 16 * 1024 * 1024
    ree_size: int = 1024 * 1024
    shared_size: int = 64 * 1024
    trampoline_size: int = PAGE_SIZE
    monitor_size: int = 64 * 1024
    gatekeeper_size: int = 16 * 1024
    device_size: int = PAGE_SIZE
    device_gap: int = PAGE_SIZE
    peripherals: int = 8

    def __post_init__(self) -> None:
        names = [f.name for f in fields(self)]
        e = _check_types(**{n: (getattr(self, n), int) for n in names})
        if e:
            raise TypeError(e)

        for name in names:
            if getattr(self, name) < 0:
                msg = f"'{name}' must not be negative"
                raise ValueError(msg)


@dataclass(frozen=True)
class MemoryLayout:
    """
    Ordered, pairwise disjoint regions of the physical address space.
    """

    regions: tuple[Region, ...]
    address_space: int
    _starts: tuple[int, ...] = field(init=False, repr=False, compare=False)
    _by_kind: dict[RegionKind, Region] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        prev_end = 0
        for r in self.regions:
            if r.length <= 0 or r.start < prev_end:
                msg = f"region {r.kind} overlaps its predecessor or is empty"
                raise LayoutError(msg)
            prev_end = r.end
        if prev_end > self.address_space:
            msg = "regions exceed the address space"
            raise OverlapError(msg)

        by_kind = {r.kind: r for r in self.regions}
        if len(by_kind) != len(self.regions):
            msg = "region kinds must be unique"
            raise LayoutError(msg)
        for tag in _SINGLETONS:
            if RegionKind(tag) not in by_kind:
                msg = f"layout lacks a {tag.value} region"
                raise LayoutError(msg)
        _dense(by_kind, Kind.ZONE)
        _dense(by_kind, Kind.PERIPHERAL)

        object.__setattr__(
            self, "_starts", tuple(r.start for r in self.regions)
        )
        object.__setattr__(self, "_by_kind", by_kind)

    def __iter__(self) -> Iterator[Region]:
        return iter(self.regions)

    def __getitem__(self, kind: RegionKind) -> Region:
        return self._by_kind[kind]

    def __contains__(self, kind: object) -> bool:
        return kind in self._by_kind

    @property
    def kinds(self) -> tuple[RegionKind, ...]:
        return tuple(r.kind for r in self.regions)

    @property
    def zone_ids(self) -> tuple[int, ...]:
        return tuple(
            r.kind.index for r in self.regions if r.kind.tag is Kind.ZONE
        )

    @property
    def peripheral_ids(self) -> tuple[int, ...]:
        return tuple(
            r.kind.index
            for r in self.regions
            if r.kind.tag is Kind.PERIPHERAL
        )

    def region_of(self, addr: int) -> RegionKind | None:
        """
        See :func:`region_of`.
        """
        i = bisect.bisect_right(self._starts, addr) - 1
        if i < 0:
            return None
        r = self.regions[i]

        return r.kind if addr in r else None


def _dense(by_kind: dict[RegionKind, Region], tag: Kind) -> None:
    ids = sorted(k.index for k in by_kind if k.tag is tag)
    if ids != list(range(1, len(ids) + 1)):
        msg = f"{tag.value} ids must be dense and start at 1 (got {ids})"
        raise LayoutError(msg)


def build_layout(
    manifests: Sequence[ZoneManifest], base_config: LayoutConfig
) -> MemoryLayout:
    """
    Pack the regions into the address space.

    Memory regions are packed back to back from address 0 in the order REE,
    SHARED, TRAMPOLINE, MONITOR, GATEKEEPER, ZONE(1..n).  After a
    ``device_gap`` hole follow PPC_MMIO, MU_A, MU_B, and PERIPHERAL(1..p),
    each ``device_size`` long.

    Raises:
        rezone.exceptions.DuplicateZoneId: If two manifests share an id.

        rezone.exceptions.OverlapError:
            If the regions don't fit into the address space.

        rezone.exceptions.LayoutError:
            If zone ids aren't dense or a whitelist names an undeclared
            peripheral.
    """
    seen: set[int] = set()
    for m in manifests:
        if m.zone_id in seen:
            msg = f"zone id {m.zone_id} is used twice"
            raise DuplicateZoneId(msg)
        seen.add(m.zone_id)
        undeclared = set(m.peripheral_whitelist) - set(
            range(1, base_config.peripherals + 1)
        )
        if undeclared:
            msg = f"zone {m.zone_id} whitelists undeclared peripherals {sorted(undeclared)}"
            raise LayoutError(msg)

    c = base_config
    sizes: list[tuple[RegionKind, int]] = [
        (REE, c.ree_size),
        (SHARED, c.shared_size),
        (TRAMPOLINE, c.trampoline_size),
        (MONITOR, c.monitor_size),
        (GATEKEEPER, c.gatekeeper_size),
    ]
    sizes += [
        (RegionKind.zone(m.zone_id), m.mem_size)
        for m in sorted(manifests, key=lambda m: m.zone_id)
    ]

    regions = []
    addr = 0
    for kind, size in sizes:
        regions.append(Region(addr, size, kind))
        addr += size

    addr += c.device_gap
    devices = [PPC_MMIO, MU_A, MU_B] + [
        RegionKind.peripheral(p) for p in range(1, c.peripherals + 1)
    ]
    for kind in devices:
        regions.append(Region(addr, c.device_size, kind))
        addr += c.device_size

    if addr > c.address_space:
        msg = (
            f"regions need {addr} bytes but the address space only has "
            f"{c.address_space}"
        )
        raise OverlapError(msg)

    return MemoryLayout(regions=tuple(regions), address_space=c.address_space)


def region_of(layout: MemoryLayout, addr: int) -> RegionKind | None:
    """
    Return the kind of the region containing *addr*, or `None` if *addr* is
    unmapped.

    Regions are half-open: ``[start, start + length)``.
    """
    return layout.region_of(addr)


def reference_permission(
    ctx: AccessContext,
    kind: RegionKind,
    whitelist: frozenset[int] = frozenset(),
) -> Permission:
    """
    Look up the permission matrix cell for *ctx*'s row and *kind*'s column.

    Args:
        ctx: Selects the NORMAL, MONITOR, or ZONE(i) row.

        kind: The region.

        whitelist: Peripheral ids the active zone may access.

    Returns:
        The permission the cluster must be granted.
    """
    if ctx.world is World.NORMAL:
        return Permission.RW if kind.is_non_secure else Permission.NA

    if kind.tag is Kind.PPC_MMIO:
        return Permission.RW if ctx.ppc_unlocked_window else Permission.NA
    if kind.tag in (Kind.GATEKEEPER, Kind.MU_B):
        return Permission.NA

    if ctx.active_zone is None:
        return Permission.RW

    if kind in (RegionKind.zone(ctx.active_zone), SHARED, MU_A):
        return Permission.RW
    if kind == TRAMPOLINE:
        return Permission.RO
    if kind.tag is Kind.PERIPHERAL and kind.index in whitelist:
        return Permission.RW

    return Permission.NA
