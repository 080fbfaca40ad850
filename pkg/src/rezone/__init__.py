# SPDX-License-Identifier: MIT

"""
Deterministic simulation of zone isolation on a TrustZone-class SoC.
"""

from . import exceptions, profiles
from .adversary import (
    AttackId,
    AttackOutcome,
    AttackProgram,
    Property,
    PropertyVerdict,
    attack_program,
    attack_simulator,
    run_attack,
)
from .cost import CostWeights, account, compare, workloads
from .explore import ExplorationReport, explore, replay
from .gatekeeper import guess_trials
from .monitor import (
    Deployment,
    Mutations,
    SimConfig,
    Simulator,
    WorldSwitchPhase,
    smc_dispatch,
    zone_entry,
    zone_exit,
)
from .programs import Program, Start
from .scenario import ScenarioSpec, load_scenario, run
from .sync import run_random, sync_scenario, sync_simulator
from .topology import LayoutConfig, RegionKind, build_layout
from .trace import Trace, TraceEvent
from .zones import ZoneManifest


__title__ = "rezone-sim"

__license__ = "MIT"


__all__ = [
    "AttackId",
    "AttackOutcome",
    "AttackProgram",
    "CostWeights",
    "Deployment",
    "ExplorationReport",
    "LayoutConfig",
    "Mutations",
    "Program",
    "Property",
    "PropertyVerdict",
    "RegionKind",
    "ScenarioSpec",
    "SimConfig",
    "Simulator",
    "Start",
    "Trace",
    "TraceEvent",
    "WorldSwitchPhase",
    "ZoneManifest",
    "account",
    "attack_program",
    "attack_simulator",
    "build_layout",
    "compare",
    "exceptions",
    "explore",
    "guess_trials",
    "load_scenario",
    "profiles",
    "replay",
    "run",
    "run_attack",
    "run_random",
    "smc_dispatch",
    "sync_scenario",
    "sync_simulator",
    "workloads",
    "zone_entry",
    "zone_exit",
]


def __getattr__(name: str) -> str:
    if name != "__version__":
        msg = f"module {__name__} has no attribute {name}"
        raise AttributeError(msg)

    from importlib.metadata import version

    return version("rezone-sim")
