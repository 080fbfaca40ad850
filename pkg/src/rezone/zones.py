# SPDX-License-Identifier: MIT

"""
Zone manifests, SMC id routing, and the zone registry.

Zones are created statically at boot.  The registry is frozen once the
normal world starts and is read-only afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Union

from ._utils import _check_types
from .exceptions import (
    DuplicateZoneId,
    LateRegistration,
    SmcRangeOverlap,
    UnknownZone,
)
from .topology import SHARED, RegionKind


__all__ = [
    "MONITOR_SERVICE_IDS",
    "Route",
    "ZoneManifest",
    "ZoneRegistry",
    "register_zone",
    "route_smc",
]

MONITOR_SERVICE_IDS = range(64)
"""
SMC ids served by the monitor itself, never routed to a zone.
"""


@dataclass(frozen=True)
class ZoneManifest:
    """
    A zone's static description.

    Attributes:
        zone_id: Dense, 1-based zone id.

        mem_size: Size of the zone's private memory region in bytes.

        smc_range: Half-open ``(first, end)`` interval of routed SMC ids.

        shared_binding: The shared-memory region the zone talks through.

        peripheral_whitelist: Peripheral ids the zone may access.
    """

    zone_id: int
    mem_size: int
    smc_range: tuple[int, int]
    shared_binding: RegionKind = SHARED
    peripheral_whitelist: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        e = _check_types(
            zone_id=(self.zone_id, int),
            mem_size=(self.mem_size, int),
            smc_range=(self.smc_range, tuple),
            shared_binding=(self.shared_binding, RegionKind),
            peripheral_whitelist=(self.peripheral_whitelist, frozenset),
        )
        if e:
            raise TypeError(e)
        if self.zone_id < 1:
            msg = f"zone ids start at 1 (got {self.zone_id})"
            raise ValueError(msg)
        if self.mem_size <= 0:
            msg = "'mem_size' must be positive"
            raise ValueError(msg)
        first, end = self.smc_range
        if first >= end:
            msg = f"smc_range {self.smc_range} is empty"
            raise ValueError(msg)
        if self.shared_binding != SHARED:
            msg = "zones bind to the SHARED region"
            raise ValueError(msg)

    def routes(self, smc_id: int) -> bool:
        return self.smc_range[0] <= smc_id < self.smc_range[1]


class Route(Enum):
    """
    Non-zone outcomes of :func:`route_smc`.
    """

    MONITOR_SERVICE = "monitor"
    UNKNOWN = "unknown"


RouteResult = Union[int, Route]


@dataclass(frozen=True)
class ZoneRegistry:
    """
    Registered zones plus the id of the most recently entered one.

    Attributes:
        zones: Zone id to manifest.

        last_zone: Zone of the most recent completed entry.

        frozen: Set once the normal world runs its first step.

        peripherals: Number of peripherals whitelists may refer to.
    """

    zones: Mapping[int, ZoneManifest] = field(default_factory=dict)
    last_zone: int | None = None
    frozen: bool = False
    peripherals: int = 8

    def __getitem__(self, zone_id: int) -> ZoneManifest:
        try:
            return self.zones[zone_id]
        except KeyError:
            msg = f"zone {zone_id} isn't registered"
            raise UnknownZone(msg) from None

    @property
    def manifests(self) -> tuple[ZoneManifest, ...]:
        return tuple(self.zones[z] for z in sorted(self.zones))

    def freeze(self) -> ZoneRegistry:
        return replace(self, frozen=True)

    def entered(self, zone_id: int) -> ZoneRegistry:
        return replace(self, last_zone=zone_id)


def register_zone(reg: ZoneRegistry, manifest: ZoneManifest) -> ZoneRegistry:
    """
    Add *manifest* to *reg*.

    Raises:
        rezone.exceptions.LateRegistration:
            If the normal world already started.

        rezone.exceptions.DuplicateZoneId: If the id is taken.

        rezone.exceptions.SmcRangeOverlap:
            If the SMC range overlaps another zone's or the reserved monitor
            range.

        ValueError: If the whitelist names undeclared peripherals.
    """
    if reg.frozen:
        msg = f"zone {manifest.zone_id} registered after the normal world started"
        raise LateRegistration(msg)
    if manifest.zone_id in reg.zones:
        msg = f"zone id {manifest.zone_id} is used twice"
        raise DuplicateZoneId(msg)

    first, end = manifest.smc_range
    if first < MONITOR_SERVICE_IDS.stop:
        msg = f"zone {manifest.zone_id} claims reserved monitor ids"
        raise SmcRangeOverlap(msg)
    for other in reg.zones.values():
        o_first, o_end = other.smc_range
        if first < o_end and o_first < end:
            msg = (
                f"zone {manifest.zone_id}'s SMC range {manifest.smc_range} "
                f"overlaps zone {other.zone_id}'s {other.smc_range}"
            )
            raise SmcRangeOverlap(msg)

    bad = [
        p
        for p in manifest.peripheral_whitelist
        if not 1 <= p <= reg.peripherals
    ]
    if bad:
        msg = f"zone {manifest.zone_id} whitelists undeclared peripherals {sorted(bad)}"
        raise ValueError(msg)

    return replace(reg, zones={**reg.zones, manifest.zone_id: manifest})


def route_smc(reg: ZoneRegistry, smc_id: int) -> RouteResult:
    """
    Resolve *smc_id* to a zone id, :attr:`Route.MONITOR_SERVICE`, or
    :attr:`Route.UNKNOWN`.
    """
    if smc_id in MONITOR_SERVICE_IDS:
        return Route.MONITOR_SERVICE
    for m in reg.zones.values():
        if m.routes(smc_id):
            return m.zone_id

    return Route.UNKNOWN
