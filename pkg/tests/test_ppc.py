# SPDX-License-Identifier: MIT

import pytest

from hypothesis import given
from hypothesis import strategies as st

from rezone.cpu import CacheGeometry, FaultKind, MappingEntry, Soc, mem_access
from rezone.exceptions import DoubleInitError, UnknownMaster
from rezone.ppc import (
    DID_ACU,
    DID_CLUSTER,
    DID_OTHER,
    MID_ACU,
    MID_CLUSTER,
    MID_OTHER,
    Bind,
    PpcState,
    SetLock,
    SetPerm,
    Unbind,
    Verdict,
    apply_monitor_row,
    apply_zone_row,
    ppc_boot_init,
    ppc_check,
    ppc_write_config,
)
from rezone.topology import (
    EL,
    GATEKEEPER,
    MONITOR,
    MU_B,
    PAGE_SIZE,
    PPC_MMIO,
    REE,
    TRAMPOLINE,
    Access,
    AccessContext,
    LayoutConfig,
    Permission,
    RegionKind,
    World,
    build_layout,
    reference_permission,
)
from rezone.trace import Trace
from rezone.zones import ZoneManifest


Z1 = ZoneManifest(1, PAGE_SIZE, (100, 200), peripheral_whitelist=frozenset({2}))
Z2 = ZoneManifest(2, PAGE_SIZE, (200, 300))
LAYOUT = build_layout([Z1, Z2], LayoutConfig(peripherals=2))


@pytest.fixture(name="booted")
def _booted():
    return ppc_boot_init(LAYOUT)


class TestBootInit:
    def test_domains(self, booted):
        """
        The cluster gets the monitor row minus the controller's registers;
        the ACU gets its three private resources.
        """
        assert booted.locked
        assert frozenset({DID_CLUSTER}) == booted.bindings[MID_CLUSTER]
        assert frozenset({DID_ACU}) == booted.bindings[MID_ACU]
        assert Permission.RW is booted.perm(DID_CLUSTER, MONITOR)
        assert Permission.NA is booted.perm(DID_CLUSTER, PPC_MMIO)
        assert Permission.NA is booted.perm(DID_CLUSTER, GATEKEEPER)
        assert {
            PPC_MMIO: Permission.RW,
            GATEKEEPER: Permission.RW,
            MU_B: Permission.RW,
        } == booted.domain_row(DID_ACU)

    def test_once(self, booted):
        """
        Booting a booted controller raises DoubleInitError.
        """
        with pytest.raises(DoubleInitError):
            ppc_boot_init(LAYOUT, booted)

    def test_other_masters(self):
        """
        DID_2 is created on request only.
        """
        state = ppc_boot_init(LAYOUT, other_masters=True)

        assert frozenset({DID_OTHER}) == state.bindings[MID_OTHER]
        assert Permission.RW is state.perm(DID_OTHER, REE)
        assert Permission.RW is state.perm(
            DID_OTHER, RegionKind.peripheral(1)
        )
        assert Permission.NA is state.perm(DID_OTHER, MONITOR)

    def test_trace(self):
        """
        Booting is recorded.
        """
        trace = Trace()

        ppc_boot_init(LAYOUT, trace=trace)

        assert ["ppc"] == [e["stage"] for e in trace.of_kind("BOOT")]


class TestCheck:
    def test_unknown_master(self, booted):
        """
        Unbound masters raise.
        """
        with pytest.raises(UnknownMaster):
            ppc_check(booted, MID_OTHER, REE, Access.READ)

    @pytest.mark.parametrize(
        ("mid", "region", "access", "verdict"),
        [
            (MID_CLUSTER, REE, Access.WRITE, Verdict.ALLOW),
            (MID_CLUSTER, GATEKEEPER, Access.READ, Verdict.DENY),
            (MID_ACU, GATEKEEPER, Access.WRITE, Verdict.ALLOW),
            (MID_ACU, REE, Access.READ, Verdict.DENY),
        ],
    )
    def test_verdicts(self, booted, mid, region, access, verdict):
        """
        A request is allowed iff a domain of the master grants it.
        """
        assert verdict is ppc_check(booted, mid, region, access)

    def test_traced(self, booted):
        """
        Each check is recorded with its verdict.
        """
        trace = Trace()

        ppc_check(booted, MID_CLUSTER, MONITOR, Access.READ, trace)

        (ev,) = trace.of_kind("PPC_CHECK")
        assert ("MONITOR", "read", "allow") == (
            ev["region"],
            ev["access"],
            ev["verdict"],
        )


class TestWriteConfig:
    def test_cluster_denied_while_locked(self, booted):
        """
        The cluster can't reconfigure a locked controller; the denial is
        recorded but not raised.
        """
        trace = Trace()
        edit = SetPerm(DID_CLUSTER, GATEKEEPER, Permission.RW)

        state = ppc_write_config(booted, MID_CLUSTER, edit, trace)

        assert state is booted
        (ev,) = trace.of_kind("PPC_CONFIG")
        assert "set_perm(0,GATEKEEPER,RW)" == ev["edit"]
        assert ev["applied"] is False

    def test_acu_applies(self, booted):
        """
        The ACU may reconfigure; the input state is left untouched.
        """
        state = ppc_write_config(
            booted, MID_ACU, SetPerm(DID_CLUSTER, REE, Permission.NA)
        )

        assert Permission.NA is state.perm(DID_CLUSTER, REE)
        assert Permission.RW is booted.perm(DID_CLUSTER, REE)

    @pytest.mark.parametrize(
        "edit",
        [
            SetPerm(DID_ACU, PPC_MMIO, Permission.NA),
            SetPerm(DID_ACU, GATEKEEPER, Permission.RO),
            SetPerm(DID_ACU, MU_B, Permission.NA),
            Unbind(MID_ACU, DID_ACU),
        ],
    )
    def test_acu_custody_protected(self, booted, edit):
        """
        Nobody can strip the ACU of its custody, not even the ACU.
        """
        assert booted is ppc_write_config(booted, MID_ACU, edit)

    def test_cluster_unlock_needs_lock_off(self, booted):
        """
        While locked, DID_0 can't be granted the controller's registers.
        """
        edit = SetPerm(DID_CLUSTER, PPC_MMIO, Permission.RW)

        assert booted is ppc_write_config(booted, MID_ACU, edit)

        unlocked = ppc_write_config(booted, MID_ACU, SetLock(False))
        state = ppc_write_config(unlocked, MID_ACU, edit)

        assert Permission.RW is state.perm(DID_CLUSTER, PPC_MMIO)
        assert Verdict.ALLOW is ppc_check(
            state, MID_CLUSTER, PPC_MMIO, Access.WRITE
        )

    def test_lock_revokes_window(self, booted):
        """
        Locking again closes the cluster's window.
        """
        state = ppc_write_config(booted, MID_ACU, SetLock(False))
        state = ppc_write_config(
            state, MID_ACU, SetPerm(DID_CLUSTER, PPC_MMIO, Permission.RW)
        )

        state = ppc_write_config(state, MID_CLUSTER, SetLock(True))

        assert state.locked
        assert Permission.NA is state.perm(DID_CLUSTER, PPC_MMIO)
        assert booted.fingerprint() == state.fingerprint()

    def test_bind_out_of_range(self, booted):
        """
        Domains beyond the hardware's count are ignored.
        """
        assert booted is ppc_write_config(
            booted, MID_ACU, Bind(MID_CLUSTER, booted.max_domains)
        )

    def test_unknown_requester(self, booted):
        """
        Writes by unbound masters are denied.
        """
        assert booted is ppc_write_config(booted, 7, SetLock(False))

    @given(
        st.lists(
            st.one_of(
                st.builds(
                    SetPerm,
                    st.integers(0, 3),
                    st.sampled_from(LAYOUT.kinds),
                    st.sampled_from(Permission),
                ),
                st.builds(Bind, st.integers(0, 2), st.integers(0, 3)),
                st.builds(Unbind, st.integers(0, 2), st.integers(0, 3)),
                st.builds(SetLock, st.booleans()),
            ),
            max_size=20,
        )
    )
    def test_locked_cluster_is_powerless(self, edits):
        """
        No sequence of writes by the cluster changes a locked controller.
        """
        booted = ppc_boot_init(LAYOUT)
        state = booted

        for edit in edits:
            state = ppc_write_config(state, MID_CLUSTER, edit)

        assert booted.fingerprint() == state.fingerprint()


class TestRows:
    def test_zone_then_monitor_round_trips(self, booted):
        """
        Applying a zone row and then the monitor row restores the boot
        configuration.
        """
        state = apply_zone_row(booted, Z1, LAYOUT, requester=MID_ACU)

        assert Permission.NA is state.perm(DID_CLUSTER, MONITOR)
        assert Permission.RO is state.perm(DID_CLUSTER, TRAMPOLINE)

        state = apply_monitor_row(state, LAYOUT, requester=MID_ACU)

        assert booted.fingerprint() == state.fingerprint()

    def test_one_write_per_region(self, booted):
        """
        Each region but the controller's own costs one write.
        """
        trace = Trace()

        apply_zone_row(booted, Z1, LAYOUT, requester=MID_ACU, trace=trace)

        assert len(LAYOUT.kinds) - 1 == len(trace.of_kind("PPC_CONFIG"))

    def test_cluster_cannot_apply_while_locked(self, booted):
        """
        The cluster's own writes are all refused.
        """
        state = apply_zone_row(booted, Z1, LAYOUT)

        assert booted.fingerprint() == state.fingerprint()


def _soc(state: PpcState) -> Soc:
    soc = Soc(LAYOUT, CacheGeometry())
    soc.ppc = state
    return soc


def _allowed(soc: Soc, kind: RegionKind, access: Access) -> bool:
    res = mem_access(soc, 0, LAYOUT[kind].start, access, value=1)
    if res.fault is not None:
        assert res.fault.kind in (FaultKind.TZASC, FaultKind.PPC)
    return res.ok


CASES = [(k, a) for k in LAYOUT.kinds for a in Access]


def _id(case):
    kind, access = case
    return f"{kind}-{access.value}"


class TestMatchesReference:
    """
    With cold caches, what the hardware lets through is exactly the
    reference matrix.
    """

    @pytest.mark.parametrize("case", CASES, ids=_id)
    def test_normal_row(self, case):
        """
        Normal-world accesses match the NORMAL row.
        """
        kind, access = case
        soc = _soc(ppc_boot_init(LAYOUT))
        ctx = AccessContext(World.NORMAL, EL.EL1)

        assert reference_permission(ctx, kind).allows(access) == _allowed(
            soc, kind, access
        )

    @pytest.mark.parametrize("case", CASES, ids=_id)
    def test_monitor_row(self, case):
        """
        Uncached EL3 accesses match the MONITOR row.
        """
        kind, access = case
        soc = _soc(ppc_boot_init(LAYOUT))
        core = soc.cluster.cores[0]
        core.el, core.world, core.el3_mmu_on = EL.EL3, World.SECURE, False
        ctx = AccessContext(World.SECURE, EL.EL3)

        assert reference_permission(ctx, kind).allows(access) == _allowed(
            soc, kind, access
        )

    @pytest.mark.parametrize("case", CASES, ids=_id)
    def test_zone_row(self, case):
        """
        S.EL1 accesses through identity mappings match the ZONE(1) row.
        """
        kind, access = case
        state = apply_zone_row(
            ppc_boot_init(LAYOUT), Z1, LAYOUT, requester=MID_ACU
        )
        soc = _soc(state)
        soc.active_zone = 1
        core = soc.cluster.cores[0]
        core.el, core.world = EL.EL1, World.SECURE
        core.s1_mappings = [
            MappingEntry(r.start, r.start, 1 if r.kind.is_non_secure else 0)
            for r in LAYOUT
        ]
        ctx = AccessContext(World.SECURE, EL.EL1, active_zone=1)

        assert reference_permission(
            ctx, kind, Z1.peripheral_whitelist
        ).allows(access) == _allowed(soc, kind, access)

    def test_unlock_window(self):
        """
        Inside the unlock window EL3 may write the controller's registers.
        """
        state = ppc_write_config(
            ppc_boot_init(LAYOUT), MID_ACU, SetLock(False)
        )
        state = ppc_write_config(
            state, MID_ACU, SetPerm(DID_CLUSTER, PPC_MMIO, Permission.RW)
        )
        soc = _soc(state)
        core = soc.cluster.cores[0]
        core.el, core.world, core.el3_mmu_on = EL.EL3, World.SECURE, False

        assert _allowed(soc, PPC_MMIO, Access.WRITE)
        assert reference_permission(
            AccessContext(World.SECURE, EL.EL3, ppc_unlocked_window=True),
            PPC_MMIO,
        ).allows(Access.WRITE)
