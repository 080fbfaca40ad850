# SPDX-License-Identifier: MIT

"""
Cross-core synchronization scenarios and schedule drivers.

1. Every core runs monitor code at EL3 while one of them enters a zone.
2. A core sleeps while another enters a zone, and wakes up in the middle of
   it.
3. Two cores run in the normal world; one calls into a zone, the other keeps
   touching normal-world memory and must wait until the zone is left.
"""

from __future__ import annotations

import logging
import random

from dataclasses import replace
from typing import Iterable

from .adversary import (
    Property,
    PropertyVerdict,
    check_events,
    check_state,
    two_zones,
)
from .monitor import Mutations, SimConfig, Simulator
from .programs import (
    ZONE_VA_BASE,
    EnterZone,
    MonitorWork,
    Program,
    Read,
    Smc,
    Start,
    Write,
)
from .topology import REE, SHARED


__all__ = [
    "SCENARIOS",
    "SafetyVerdict",
    "honest_body",
    "run_fair",
    "run_random",
    "sync_scenario",
    "sync_simulator",
]

_log = logging.getLogger(__name__)

SCENARIOS = (1, 2, 3)
ZONE_SMC = 150

SafetyVerdict = PropertyVerdict


def honest_body() -> Program:
    """
    A zone body that reads and writes its own memory.
    """
    return Program(ops=(Read(ZONE_VA_BASE), Write(ZONE_VA_BASE + 0x40, 1)))


def sync_simulator(
    scenario: int,
    cores: int = 2,
    config: SimConfig | None = None,
    *,
    mutations: Mutations | None = None,
) -> Simulator:
    """
    A booted system with *cores* cores placed for *scenario*.
    """
    if scenario not in SCENARIOS:
        msg = f"unknown sync scenario {scenario!r}"
        raise ValueError(msg)
    if cores < 2:
        msg = "sync scenarios need at least two cores"
        raise ValueError(msg)
    if config is None:
        config = SimConfig()
    config = replace(config, geometry=replace(config.geometry, cores=cores))
    if mutations is not None:
        config = replace(config, mutations=mutations)

    programs: dict[int, Program] = {}
    if scenario == 1:
        for c in range(cores):
            programs[c] = Program(
                ops=(MonitorWork(), MonitorWork(0x140)), start=Start.EL3
            )
        programs[0] = Program(
            ops=(MonitorWork(), EnterZone(1), MonitorWork()), start=Start.EL3
        )
    elif scenario == 2:
        programs[0] = Program(ops=(EnterZone(1), MonitorWork()), start=Start.EL3)
        for c in range(1, cores):
            programs[c] = Program(
                ops=(MonitorWork(), MonitorWork(0x140)), start=Start.SLEEPING
            )
    else:
        layout = Simulator(config, two_zones(), boot=False).layout
        ree, shared = layout[REE].start + 0x200, layout[SHARED].start
        normal = Program(ops=(Read(ree), Write(ree, 7), Read(shared)))
        for c in range(cores):
            programs[c] = normal
        # Normal-world code addresses memory physically.
        programs[1] = Program(ops=(Smc(ZONE_SMC), Read(shared)))

    return Simulator(
        config,
        two_zones(),
        programs,
        {1: honest_body(), 2: honest_body()},
    )


def run_fair(sim: Simulator, max_steps: int = 10_000) -> Simulator:
    """
    Finish *sim* round-robin: every enabled actor gets a turn in rotation.
    """
    turn = 0
    for _ in range(max_steps):
        actors = sim.enabled_actors()
        if not actors:
            break
        sim.step(actors[turn % len(actors)])
        turn += 1

    return sim


def run_random(sim: Simulator, seed: int, max_steps: int = 10_000) -> Simulator:
    """
    Drive *sim* with a uniform choice among enabled actors, seeded by *seed*.
    """
    rng = random.Random(seed)
    for _ in range(max_steps):
        actors = sim.enabled_actors()
        if not actors:
            break
        sim.step(rng.choice(actors))

    return sim


def sync_scenario(
    sim: Simulator,
    scenario: int,
    schedule: Iterable[str] = (),
    *,
    max_steps: int = 10_000,
) -> SafetyVerdict:
    """
    Replay *schedule* on *sim*, finish fairly, and judge safety.

    Safe means no honest core was denied an access, EL3 never hung, and
    every core ran its program to the end.
    """
    prefix = list(schedule)
    sim.run(prefix)
    run_fair(sim, max_steps)

    found = check_events(sim, sim.trace)
    found.update(
        (p, d) for p, d in check_state(sim).items() if p not in found
    )
    detail = found.get(Property.SAFETY, "")
    if not detail and not sim.finished:
        detail = f"no progress after {max_steps} steps"
    if detail:
        _log.warning("sync scenario %d unsafe: %s", scenario, detail)
        return SafetyVerdict(
            property=Property.SAFETY,
            holds=False,
            detail=detail,
            schedule=tuple(sim.schedule),
            witness=tuple(sim.trace),
        )

    return SafetyVerdict(property=Property.SAFETY, holds=True)
