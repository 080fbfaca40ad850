# SPDX-License-Identifier: MIT

"""
The platform partition controller: security domains, per-resource
permissions, bus-master bindings, and self-protection.

The controller intercepts every bus request, whatever its NS bit, and
can't tell the cores of a cluster apart: :func:`ppc_check` takes a bus
master id, never a core id.

All operations are functional.  They return a new :class:`PpcState` and
leave their input untouched, so states can be snapshotted freely.
"""

from __future__ import annotations

import logging

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Union

from .exceptions import DoubleInitError, UnknownMaster
from .topology import (
    EL,
    GATEKEEPER,
    MU_B,
    PPC_MMIO,
    REE,
    Access,
    AccessContext,
    Kind,
    MemoryLayout,
    Permission,
    RegionKind,
    World,
    reference_permission,
)
from .trace import Trace
from .zones import ZoneManifest


__all__ = [
    "DID_ACU",
    "DID_CLUSTER",
    "DID_OTHER",
    "MAX_DOMAINS",
    "MID_ACU",
    "MID_CLUSTER",
    "MID_OTHER",
    "Bind",
    "ConfigEdit",
    "PpcState",
    "SetLock",
    "SetPerm",
    "Unbind",
    "Verdict",
    "apply_monitor_row",
    "apply_zone_row",
    "ppc_boot_init",
    "ppc_check",
    "ppc_write_config",
]

_log = logging.getLogger(__name__)

MID_CLUSTER = 0
MID_ACU = 1
MID_OTHER = 2

DID_CLUSTER = 0
DID_ACU = 1
DID_OTHER = 2

MAX_DOMAINS = 4


class Verdict(Enum):
    ALLOW = "allow"
    DENY = "deny"


@dataclass(frozen=True)
class SetPerm:
    did: int
    region: RegionKind
    perm: Permission

    def __str__(self) -> str:
        return f"set_perm({self.did},{self.region},{self.perm.name})"


@dataclass(frozen=True)
class Bind:
    mid: int
    did: int

    def __str__(self) -> str:
        return f"bind({self.mid},{self.did})"


@dataclass(frozen=True)
class Unbind:
    mid: int
    did: int

    def __str__(self) -> str:
        return f"unbind({self.mid},{self.did})"


@dataclass(frozen=True)
class SetLock:
    locked: bool

    def __str__(self) -> str:
        return f"set_lock({str(self.locked).lower()})"


ConfigEdit = Union[SetPerm, Bind, Unbind, SetLock]


@dataclass(frozen=True)
class PpcState:
    """
    Partition controller configuration.

    An unbooted controller has no bindings; :func:`ppc_boot_init` turns it
    into a booted one exactly once.

    Attributes:
        bindings: Bus master id to the set of domains it belongs to.

        resource_perms:
            ``(domain id, region kind)`` to permission; missing cells are
            ``NA``.

        locked:
            While locked, only the ACU's domain may write the controller's
            registers.

        max_domains: Number of domains the hardware supports.
    """

    bindings: dict[int, frozenset[int]] = field(default_factory=dict)
    resource_perms: dict[tuple[int, RegionKind], Permission] = field(
        default_factory=dict
    )
    locked: bool = False
    max_domains: int = MAX_DOMAINS
    booted: bool = False

    def perm(self, did: int, kind: RegionKind) -> Permission:
        return self.resource_perms.get((did, kind), Permission.NA)

    def domain_row(self, did: int) -> dict[RegionKind, Permission]:
        return {
            k: p for (d, k), p in self.resource_perms.items() if d == did
        }

    def fingerprint(self) -> tuple[object, ...]:
        return (
            tuple(sorted((m, tuple(sorted(d))) for m, d in self.bindings.items())),
            tuple(
                sorted(
                    (d, str(k), p.value)
                    for (d, k), p in self.resource_perms.items()
                    if p is not Permission.NA
                )
            ),
            self.locked,
        )


def _row(
    layout: MemoryLayout,
    ctx: AccessContext,
    whitelist: frozenset[int] = frozenset(),
) -> dict[RegionKind, Permission]:
    return {
        k: reference_permission(ctx, k, whitelist)
        for k in layout.kinds
        if k != PPC_MMIO
    }


def ppc_boot_init(
    layout: MemoryLayout,
    state: PpcState | None = None,
    *,
    other_masters: bool = False,
    max_domains: int = MAX_DOMAINS,
    trace: Trace | None = None,
) -> PpcState:
    """
    Configure the boot-time domains.

    DID_0 holds the cluster with the monitor row; DID_1 holds the ACU with
    the controller's own registers, the gatekeeper's memory, and the ACU
    side of the message unit.  The controller comes out locked.

    Args:
        layout: The memory layout.

        state: A previously booted state is refused.

        other_masters:
            Also create DID_2 for MID_2 with RW on REE and all peripherals.

    Raises:
        rezone.exceptions.DoubleInitError: If *state* was booted already.
    """
    if state is not None and state.booted:
        msg = "the partition controller is configured once, at boot"
        raise DoubleInitError(msg)

    perms: dict[tuple[int, RegionKind], Permission] = {
        (DID_CLUSTER, k): p
        for k, p in _row(
            layout, AccessContext(World.SECURE, EL.EL3)
        ).items()
    }
    for k in (PPC_MMIO, GATEKEEPER, MU_B):
        perms[(DID_ACU, k)] = Permission.RW
    perms[(DID_CLUSTER, PPC_MMIO)] = Permission.NA
    bindings = {
        MID_CLUSTER: frozenset({DID_CLUSTER}),
        MID_ACU: frozenset({DID_ACU}),
    }
    if other_masters:
        bindings[MID_OTHER] = frozenset({DID_OTHER})
        perms[(DID_OTHER, REE)] = Permission.RW
        for k in layout.kinds:
            if k.tag is Kind.PERIPHERAL:
                perms[(DID_OTHER, k)] = Permission.RW

    if trace is not None:
        trace.emit("BOOT", stage="ppc", detail="domains configured, locked")
    _log.debug("partition controller booted with %d domains", len(bindings))

    return PpcState(
        bindings=bindings,
        resource_perms=perms,
        locked=True,
        max_domains=max_domains,
        booted=True,
    )


def ppc_check(
    state: PpcState,
    mid: int,
    region: RegionKind,
    access: Access,
    trace: Trace | None = None,
) -> Verdict:
    """
    Decide a bus request.

    A request is allowed iff one of the master's domains grants at least the
    requested access on *region*.

    Raises:
        rezone.exceptions.UnknownMaster:
            If *mid* isn't bound to any domain.
    """
    domains = state.bindings.get(mid)
    if not domains:
        msg = f"bus master {mid} isn't bound to any domain"
        raise UnknownMaster(msg)

    verdict = (
        Verdict.ALLOW
        if any(state.perm(d, region).allows(access) for d in domains)
        else Verdict.DENY
    )
    if trace is not None:
        trace.emit(
            "PPC_CHECK",
            mid=mid,
            region=str(region),
            access=access.value,
            verdict=verdict.value,
        )

    return verdict


def _protected(edit: ConfigEdit) -> bool:
    """
    Edits that would strip the ACU of its custody are ignored by hardware.
    """
    if isinstance(edit, SetPerm):
        return (
            edit.did == DID_ACU
            and edit.region in (PPC_MMIO, GATEKEEPER, MU_B)
            and edit.perm is not Permission.RW
        )
    if isinstance(edit, Unbind):
        return edit.mid == MID_ACU and edit.did == DID_ACU

    return False


def _apply(state: PpcState, edit: ConfigEdit) -> PpcState | None:
    if _protected(edit):
        return None

    if isinstance(edit, SetPerm):
        if not 0 <= edit.did < state.max_domains:
            return None
        if (
            state.locked
            and edit.did == DID_CLUSTER
            and edit.region == PPC_MMIO
            and edit.perm is not Permission.NA
        ):
            return None
        perms = dict(state.resource_perms)
        perms[(edit.did, edit.region)] = edit.perm
        return replace(state, resource_perms=perms)

    if isinstance(edit, (Bind, Unbind)):
        if not 0 <= edit.did < state.max_domains:
            return None
        bindings = dict(state.bindings)
        current = bindings.get(edit.mid, frozenset())
        bindings[edit.mid] = (
            current | {edit.did}
            if isinstance(edit, Bind)
            else current - {edit.did}
        )
        return replace(state, bindings=bindings)

    perms = dict(state.resource_perms)
    if edit.locked:
        perms[(DID_CLUSTER, PPC_MMIO)] = Permission.NA

    return replace(state, resource_perms=perms, locked=edit.locked)


def ppc_write_config(
    state: PpcState,
    requester: int,
    edit: ConfigEdit,
    trace: Trace | None = None,
) -> PpcState:
    """
    Write one configuration register on behalf of *requester*.

    The edit is applied only if *requester* may write ``PPC_MMIO``.
    Otherwise the state is returned unchanged and the denial is recorded.
    Denials are silent at the bus level, so nothing is raised.
    """
    applied: PpcState | None = None
    try:
        allowed = ppc_check(state, requester, PPC_MMIO, Access.WRITE, trace)
    except UnknownMaster:
        allowed = Verdict.DENY
    if allowed is Verdict.ALLOW:
        applied = _apply(state, edit)

    if trace is not None:
        trace.emit(
            "PPC_CONFIG",
            requester=requester,
            edit=str(edit),
            applied=applied is not None,
        )
    if applied is None:
        _log.debug("denied config write %s by master %d", edit, requester)
        return state

    return applied


def _write_row(
    state: PpcState,
    row: dict[RegionKind, Permission],
    requester: int,
    trace: Trace | None,
) -> PpcState:
    for kind, perm in row.items():
        state = ppc_write_config(
            state, requester, SetPerm(DID_CLUSTER, kind, perm), trace
        )

    return state


def apply_zone_row(
    state: PpcState,
    zone: ZoneManifest,
    layout: MemoryLayout,
    *,
    requester: int = MID_CLUSTER,
    trace: Trace | None = None,
) -> PpcState:
    """
    Make DID_0 equal to the ZONE(*zone*) row of the reference matrix.

    ``PPC_MMIO`` is left alone: it belongs to the lock protocol.  Every
    region costs one configuration write, each subject to
    :func:`ppc_write_config`'s check.
    """
    row = _row(
        layout, AccessContext(World.SECURE, EL.EL1, zone.zone_id),
        zone.peripheral_whitelist,
    )

    return _write_row(state, row, requester, trace)


def apply_monitor_row(
    state: PpcState,
    layout: MemoryLayout,
    *,
    requester: int = MID_CLUSTER,
    trace: Trace | None = None,
) -> PpcState:
    """
    Make DID_0 equal to the MONITOR row of the reference matrix.

    The dual of :func:`apply_zone_row`.
    """
    row = _row(layout, AccessContext(World.SECURE, EL.EL3))

    return _write_row(state, row, requester, trace)
