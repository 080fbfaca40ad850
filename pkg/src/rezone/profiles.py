# SPDX-License-Identifier: MIT

"""
Named cluster geometries.  Pass one to :class:`rezone.monitor.SimConfig` or
pick it in a scenario file with ``geometry: <name>``.
"""

from __future__ import annotations

from .cpu import CacheGeometry
from .monitor import SimConfig


__all__ = [
    "CHEAPEST",
    "DEFAULT",
    "A53_GEOMETRY",
    "by_name",
    "get_default_config",
]


def get_default_config() -> SimConfig:
    """
    Create a configuration with the default geometry.

    Returns:
        A fresh configuration; mutating it doesn't affect later calls.
    """
    return SimConfig(geometry=CacheGeometry(**vars(DEFAULT)))


def by_name(name: str) -> CacheGeometry:
    """
    Look up a geometry by its lower-case name.

    Raises:
        KeyError: If there is no such profile.
    """
    profiles = {
        "default": DEFAULT,
        "a53": A53_GEOMETRY,
        "cheapest": CHEAPEST,
    }
    return CacheGeometry(**vars(profiles[name]))


# Four cores with caches small enough that eviction shows up in short runs.
DEFAULT = CacheGeometry(
    cores=4,
    l1_lines=4,
    l2_lines=16,
    tlb_entries=4,
    line_size=16,
)

# A quad Cortex-A53 cluster: 32 KiB L1 and 2 MiB L2 with 64-byte lines.
# Documentation only: far too large to explore.
A53_GEOMETRY = CacheGeometry(
    cores=4,
    l1_lines=512,  # 32 KiB
    l2_lines=32768,  # 2 MiB
    tlb_entries=512,
    line_size=64,
)

# Only for testing!
CHEAPEST = CacheGeometry(
    cores=2,
    l1_lines=2,
    l2_lines=4,
    tlb_entries=2,
    line_size=16,
)
