# SPDX-License-Identifier: MIT

import pytest

from hypothesis import given
from hypothesis import strategies as st

from rezone.exceptions import DuplicateZoneId, LayoutError, OverlapError
from rezone.topology import (
    GATEKEEPER,
    MONITOR,
    MU_A,
    MU_B,
    PAGE_SIZE,
    PPC_MMIO,
    REE,
    SHARED,
    TRAMPOLINE,
    EL,
    AccessContext,
    LayoutConfig,
    Permission,
    RegionKind,
    World,
    build_layout,
    reference_permission,
    region_of,
)
from rezone.zones import ZoneManifest


Z1 = ZoneManifest(1, PAGE_SIZE, (100, 200))
Z2 = ZoneManifest(2, 2 * PAGE_SIZE, (200, 300), peripheral_whitelist=frozenset({3}))


class TestBuildLayout:
    def test_order(self):
        """
        Memory regions come first in a fixed order, then the device windows
        after a gap.
        """
        layout = build_layout([Z2, Z1], LayoutConfig(peripherals=3))

        assert [
            REE,
            SHARED,
            TRAMPOLINE,
            MONITOR,
            GATEKEEPER,
            RegionKind.zone(1),
            RegionKind.zone(2),
            PPC_MMIO,
            MU_A,
            MU_B,
            RegionKind.peripheral(1),
            RegionKind.peripheral(2),
            RegionKind.peripheral(3),
        ] == list(layout.kinds)
        assert 0 == layout[REE].start
        assert (
            layout[PPC_MMIO].start - layout[RegionKind.zone(2)].end
            == LayoutConfig().device_gap
        )

    def test_disjoint(self):
        """
        Regions are pairwise disjoint and sized as configured.
        """
        cfg = LayoutConfig()
        layout = build_layout([Z1, Z2], cfg)

        regions = list(layout)
        for a, b in zip(regions, regions[1:]):
            assert a.end <= b.start
        assert cfg.ree_size == layout[REE].length
        assert 2 * PAGE_SIZE == layout[RegionKind.zone(2)].length

    def test_duplicate_zone(self):
        """
        Two manifests with the same id are rejected.
        """
        with pytest.raises(DuplicateZoneId):
            build_layout(
                [Z1, ZoneManifest(1, PAGE_SIZE, (300, 400))], LayoutConfig()
            )

    def test_too_small(self):
        """
        Regions that don't fit the address space raise OverlapError, which
        is a LayoutError.
        """
        with pytest.raises(OverlapError) as ei:
            build_layout([Z1], LayoutConfig(address_space=PAGE_SIZE))

        assert isinstance(ei.value, LayoutError)

    def test_sparse_zone_ids(self):
        """
        Zone ids must be dense.
        """
        with pytest.raises(LayoutError):
            build_layout([Z2], LayoutConfig())

    def test_undeclared_peripheral(self):
        """
        A whitelist may only name declared peripherals.
        """
        with pytest.raises(LayoutError):
            build_layout(
                [ZoneManifest(1, PAGE_SIZE, (100, 200), peripheral_whitelist=frozenset({9}))],
                LayoutConfig(peripherals=8),
            )

    def test_config_types(self):
        """
        Sizes must be ints.
        """
        with pytest.raises(TypeError, match="'ree_size' must be a int"):
            LayoutConfig(ree_size="big")


class TestRegionOf:
    def test_boundaries(self):
        """
        Regions are half-open; the device gap is unmapped.
        """
        layout = build_layout([Z1], LayoutConfig())
        ree = layout[REE]

        assert REE == region_of(layout, ree.start)
        assert REE == region_of(layout, ree.end - 1)
        assert SHARED == region_of(layout, ree.end)
        assert None is region_of(layout, layout[RegionKind.zone(1)].end)
        assert None is region_of(layout, layout.address_space + 1)

    @given(st.integers(min_value=0, max_value=16 * 1024 * 1024 - 1))
    def test_total(self, addr):
        """
        Every address maps to the region containing it, or to None.
        """
        layout = build_layout([Z1, Z2], LayoutConfig())

        kind = region_of(layout, addr)

        if kind is None:
            assert all(addr not in r for r in layout)
        else:
            assert addr in layout[kind]


MONITOR_CTX = AccessContext(World.SECURE, EL.EL3)
NORMAL_CTX = AccessContext(World.NORMAL, EL.EL1)


class TestReferencePermission:
    @pytest.mark.parametrize(
        ("kind", "perm"),
        [
            (REE, Permission.RW),
            (SHARED, Permission.RW),
            (MONITOR, Permission.NA),
            (TRAMPOLINE, Permission.NA),
            (GATEKEEPER, Permission.NA),
            (RegionKind.zone(1), Permission.NA),
            (PPC_MMIO, Permission.NA),
            (MU_A, Permission.NA),
        ],
    )
    def test_normal_row(self, kind, perm):
        """
        The normal world only sees non-secure memory.
        """
        assert perm is reference_permission(NORMAL_CTX, kind)

    @pytest.mark.parametrize(
        ("kind", "perm"),
        [
            (REE, Permission.RW),
            (MONITOR, Permission.RW),
            (RegionKind.zone(2), Permission.RW),
            (GATEKEEPER, Permission.NA),
            (MU_A, Permission.RW),
            (MU_B, Permission.NA),
            (PPC_MMIO, Permission.NA),
        ],
    )
    def test_monitor_row(self, kind, perm):
        """
        EL3 sees everything but the gatekeeper's private resources.
        """
        assert perm is reference_permission(MONITOR_CTX, kind)

    @pytest.mark.parametrize(
        ("kind", "perm"),
        [
            (RegionKind.zone(2), Permission.RW),
            (RegionKind.zone(1), Permission.NA),
            (SHARED, Permission.RW),
            (TRAMPOLINE, Permission.RO),
            (REE, Permission.NA),
            (MONITOR, Permission.NA),
            (GATEKEEPER, Permission.NA),
            (MU_A, Permission.RW),
            (RegionKind.peripheral(3), Permission.RW),
            (RegionKind.peripheral(4), Permission.NA),
        ],
    )
    def test_zone_row(self, kind, perm):
        """
        A zone sees its own memory, shared memory, its whitelisted
        peripherals, and the trampoline read-only.
        """
        ctx = AccessContext(World.SECURE, EL.EL1, active_zone=2)

        assert perm is reference_permission(ctx, kind, frozenset({3}))

    def test_unlock_window(self):
        """
        The controller's registers are writable only inside the unlock
        window, in the monitor and the zone rows alike.
        """
        for zone in (None, 1):
            ctx = AccessContext(
                World.SECURE, EL.EL3, active_zone=zone, ppc_unlocked_window=True
            )

            assert Permission.RW is reference_permission(ctx, PPC_MMIO)

    def test_el3_is_secure(self):
        """
        There is no non-secure EL3.
        """
        with pytest.raises(ValueError, match="EL3"):
            AccessContext(World.NORMAL, EL.EL3)
