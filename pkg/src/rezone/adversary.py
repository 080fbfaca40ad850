# SPDX-License-Identifier: MIT

"""
Attacker programs and the isolation properties they try to break.

The attacker is a fully compromised trusted OS: it runs at S.EL1 inside
zone 1, may install any page table entry, and talks to the gatekeeper
through the message unit like the trampoline does.

Properties are checked on the trace, step by step, plus a few checks on the
current state:

* ``P1``: no zone ever reads or writes normal-world memory, or sees its
  secrets.
* ``P2``: no zone observes monitor or gatekeeper memory or the token,
  reconfigures the partition controller, or gets EL3 to run tampered code.
* ``P3``: no zone observes another zone.
* ``SAFETY``: honest code never faults, EL3 never hangs, and the system
  never deadlocks.

Secrets are detected with canaries: unique words planted at boot in every
region an attacker must not see.
"""

from __future__ import annotations

import logging

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from ._utils import measure
from .exceptions import SecureBootError
from .monitor import (
    CANARY_OFFSET,
    Mutations,
    SimConfig,
    Simulator,
)
from .ppc import DID_CLUSTER, SetPerm, ppc_boot_init
from .programs import (
    PPC_VA,
    TRAMPOLINE_VA,
    ZONE_VA_BASE,
    EnterZone,
    GuessToken,
    Map,
    MonitorWork,
    Op,
    PpcWrite,
    PreBootPatch,
    Program,
    Read,
    ReadTokenReg,
    Start,
    Write,
)
from .topology import (
    GATEKEEPER,
    MONITOR,
    MU_B,
    PAGE_SIZE,
    PPC_MMIO,
    REE,
    TRAMPOLINE,
    EL,
    Kind,
    Permission,
    RegionKind,
    World,
)
from .trace import TraceEvent
from .zones import ZoneManifest


__all__ = [
    "ATTACK_ZONE",
    "MUTATION_ATTACKS",
    "AttackId",
    "AttackOutcome",
    "AttackProgram",
    "Property",
    "PropertyVerdict",
    "attack_program",
    "attack_simulator",
    "check_events",
    "check_state",
    "check_step",
    "run_attack",
    "two_zones",
    "verdicts",
]

_log = logging.getLogger(__name__)

ATTACK_ZONE = 1
VICTIM_ZONE = 2
ATTACK_VA = 0x2000_0000
POISON = 0xBAD0_C0DE_BAD0_C0DE


class Property(Enum):
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    SAFETY = "SAFETY"


@dataclass(frozen=True)
class PropertyVerdict:
    """
    Attributes:
        property: The property checked.

        holds: Whether it held.

        detail: What broke it.

        schedule: Actor sequence reproducing the violation.

        witness: The violating trace.
    """

    property: Property
    holds: bool
    detail: str = ""
    schedule: tuple[str, ...] = ()
    witness: tuple[TraceEvent, ...] = ()

    def to_record(self) -> dict[str, object]:
        return {
            "property": self.property.value,
            "holds": self.holds,
            "detail": self.detail,
            "schedule": list(self.schedule),
            "witness_events": len(self.witness),
        }


class AttackId(Enum):
    A1_MAPPING = "A1_MAPPING"
    A2_PPC_HIJACK = "A2_PPC_HIJACK"
    A3_CACHE_LEAK = "A3_CACHE_LEAK"
    A4_CODE_INJECT = "A4_CODE_INJECT"
    A5_TCB_TAMPER = "A5_TCB_TAMPER"


@dataclass(frozen=True)
class AttackProgram:
    """
    An attack: the steps zone *zone*'s trusted OS runs, and the pre-boot
    patches that go with it.
    """

    id: AttackId
    steps: tuple[Op, ...]
    zone: int = ATTACK_ZONE

    @property
    def pre_boot(self) -> tuple[PreBootPatch, ...]:
        return tuple(s for s in self.steps if isinstance(s, PreBootPatch))

    @property
    def runtime(self) -> tuple[Op, ...]:
        return tuple(s for s in self.steps if not isinstance(s, PreBootPatch))


@dataclass(frozen=True)
class AttackOutcome:
    """
    Attributes:
        attack: Which attack ran.

        blocked: Whether every defence held.

        verdicts: One per property.

        detail: How the attack was stopped, or what it achieved.

        faults: Faults the attacker took.
    """

    attack: AttackId
    blocked: bool
    verdicts: tuple[PropertyVerdict, ...] = ()
    detail: str = ""
    faults: int = 0

    def to_record(self) -> dict[str, object]:
        return {
            "attack": self.attack.value,
            "outcome": "blocked" if self.blocked else "succeeded",
            "detail": self.detail,
            "faults": self.faults,
            "properties": [v.to_record() for v in self.verdicts],
        }


# -- property checks -------------------------------------------------------


def _zone_context(e: TraceEvent) -> bool:
    return (
        e["el"] < EL.EL3
        and e["world"] == World.SECURE.value
        and e["zone"] is not None
    )


def check_events(
    sim: Simulator, events: Iterable[TraceEvent]
) -> dict[Property, str]:
    """
    Scan *events* for property violations.

    Returns:
        The first violation found per property.
    """
    canaries = {v: k for k, v in sim.canaries.items()}
    found: dict[Property, str] = {}

    def flag(prop: Property, detail: str) -> None:
        found.setdefault(prop, detail)

    for e in events:
        if e.kind == "MEM" and _zone_context(e):
            zone = e["zone"]
            region = e["region"]
            allowed = e["verdict"] == "allow"
            if allowed and region == str(REE):
                flag(Property.P1, f"zone {zone} accessed REE at {e['pa']:#x}")
            if allowed and region in (str(MONITOR), str(GATEKEEPER)):
                flag(Property.P2, f"zone {zone} accessed {region}")
            if (
                allowed
                and region is not None
                and region.startswith("ZONE(")
                and region != str(RegionKind.zone(zone))
            ):
                flag(Property.P3, f"zone {zone} accessed {region}")
            if e["access"] == "read" and allowed:
                leaked = canaries.get(e["value"])
                if leaked is not None:
                    prop = {
                        Kind.REE: Property.P1,
                        Kind.MONITOR: Property.P2,
                        Kind.GATEKEEPER: Property.P2,
                    }.get(leaked.tag, Property.P3)
                    if leaked != RegionKind.zone(zone):
                        flag(prop, f"zone {zone} observed the {leaked} secret")
        elif e.kind == "EL3_EXEC" and e["tainted"]:
            flag(Property.P2, f"EL3 executed tampered code at {e['pa']:#x}")
        elif (
            e.kind == "PPC_CONFIG"
            and e["applied"]
            and e["requester"] == 0
            and e.phase not in ("D", "D'")
        ):
            flag(Property.P2, f"{e['edit']} applied from {e.phase}")
        elif e.kind == "FAULT" and e["honest"]:
            flag(
                Property.SAFETY,
                f"honest core {e['core']} faulted: {e['fault']} {e['detail']}",
            )

    return found


def check_state(sim: Simulator) -> dict[Property, str]:
    """
    Check the current state: the token must not sit in any cache, EL3 must
    not hang, and something must be able to run.
    """
    found: dict[Property, str] = {}
    caches = [c.l1 for c in sim.soc.cluster.cores] + [sim.soc.cluster.l2]
    gk = sim.layout[GATEKEEPER]
    if any(line.pa in gk for c in caches for line in c):
        found[Property.P2] = "the token is cached"
    hung = [t.core for t in sim.threads if t.hung]
    if hung:
        found[Property.SAFETY] = f"cores {hung} hang at EL3"
    elif sim.deadlocked:
        found[Property.SAFETY] = "deadlock"

    return found


def check_step(sim: Simulator, mark: int) -> dict[Property, str]:
    """
    Violations caused since the trace had *mark* events.
    """
    found = check_events(sim, sim.trace.since(mark))
    for prop, detail in check_state(sim).items():
        found.setdefault(prop, detail)

    return found


def verdicts(
    sim: Simulator, found: Mapping[Property, str] | None = None
) -> tuple[PropertyVerdict, ...]:
    if found is None:
        found = check_step(sim, 0)
    return tuple(
        PropertyVerdict(
            property=p,
            holds=p not in found,
            detail=found.get(p, ""),
            schedule=tuple(sim.schedule) if p in found else (),
            witness=tuple(sim.trace) if p in found else (),
        )
        for p in Property
    )


# -- attack programs -------------------------------------------------------


def _alias(slot: int, pa: int, ns: int = 0, writable: bool = True) -> tuple[Map, int]:
    """
    Map the page holding *pa* at attacker slot *slot*; return the map op
    and the virtual address of *pa*.
    """
    va = ATTACK_VA + slot * PAGE_SIZE
    page = pa - pa % PAGE_SIZE
    return Map(va, page, ns, writable), va + pa % PAGE_SIZE


def attack_program(
    attack: AttackId, sim: Simulator, *, guesses: int = 2
) -> AttackProgram:
    """
    Build *attack* against *sim*'s layout.
    """
    steps: list[Op] = []
    if attack in (AttackId.A1_MAPPING, AttackId.A3_CACHE_LEAK):
        # A1 reaches for memory through fresh mappings; A3 reuses the very
        # same aliases but counts on lines the monitor left in the caches.
        targets = [
            (sim.canary_addr(REE), 1),
            (sim.canary_addr(MONITOR), 0),
            (sim.canary_addr(RegionKind.zone(VICTIM_ZONE)), 0),
        ]
        for slot, (pa, ns) in enumerate(targets):
            m, va = _alias(slot, pa, ns)
            steps += [m, Read(va)]
    elif attack is AttackId.A2_PPC_HIJACK:
        mu_b, mu_b_va = _alias(0, sim.addr(MU_B))
        mon, mon_va = _alias(1, sim.canary_addr(MONITOR))
        steps += [
            ReadTokenReg(),
            mu_b,
            Write(mu_b_va, 0),
            GuessToken(guesses),
            Map(PPC_VA, sim.addr(PPC_MMIO), 0),
            PpcWrite(PPC_VA, SetPerm(DID_CLUSTER, MONITOR, Permission.RW)),
            mon,
            Read(mon_va),
        ]
    elif attack is AttackId.A4_CODE_INJECT:
        line = sim.config.geometry.line_size
        tramp = sim.addr(TRAMPOLINE)
        alias, va = _alias(0, tramp)
        vector, resume = va, va + 8 * line
        steps += [
            Read(TRAMPOLINE_VA),
            Write(TRAMPOLINE_VA, POISON),
            alias,
            Read(vector),
            Read(resume),
            Write(vector, POISON),
            Write(resume, POISON),
        ]
    else:
        steps.append(PreBootPatch("trampoline", 0, POISON))

    return AttackProgram(id=attack, steps=tuple(steps))


def two_zones(pages: int = 1) -> tuple[ZoneManifest, ZoneManifest]:
    """
    The default pair of zones: the attacker's and its victim.
    """
    return (
        ZoneManifest(ATTACK_ZONE, pages * PAGE_SIZE, (100, 200)),
        ZoneManifest(VICTIM_ZONE, pages * PAGE_SIZE, (200, 300)),
    )


def attack_simulator(
    attack: AttackId,
    config: SimConfig | None = None,
    *,
    mutations: Mutations | None = None,
    zones: Sequence[ZoneManifest] | None = None,
) -> Simulator:
    """
    An unbooted two-core system primed for *attack*.

    Core 0 starts at EL3, touches the victims' secrets so they're cached,
    and enters the attacker's zone.  Core 1 runs in the normal world and
    holds REE data in its private cache when it gets halted.  Zone 2 runs an
    honest body.
    """
    if config is None:
        config = SimConfig()
    if mutations is not None:
        config = replace(config, mutations=mutations)
    sim = Simulator(config, zones or two_zones(), boot=False)

    victim = sim.canary_addr(RegionKind.zone(VICTIM_ZONE))
    ree = sim.canary_addr(REE)
    sim.starts[0] = Start.EL3
    sim.threads[0].frames[0].ops = (
        Read(victim),
        Read(ree),
        MonitorWork(CANARY_OFFSET),
        EnterZone(ATTACK_ZONE),
    )
    if len(sim.threads) > 1:
        sim.threads[1].frames[0].ops = (Read(ree), Read(ree + 0x100))
    sim.zone_bodies[VICTIM_ZONE] = Program(
        ops=(Read(ZONE_VA_BASE + CANARY_OFFSET),)
    )
    program = attack_program(attack, sim)
    sim.zone_bodies[ATTACK_ZONE] = Program(ops=program.runtime, trusted=False)

    return sim


def run_attack(
    sim: Simulator,
    program: AttackProgram,
    schedule: Iterable[str] | None = None,
) -> AttackOutcome:
    """
    Run *program* in its zone and judge the outcome.

    *sim* may be unbooted, in which case pre-boot steps are applied first
    and the system is booted here.  The attack is blocked iff no property
    broke, the partition controller ends up as it was at boot, and the
    trampoline in memory is intact.
    """
    if not sim.booted:
        for patch in program.pre_boot:
            sim.patch_image(patch.image, patch.index, patch.value)
        try:
            sim.boot()
        except SecureBootError as e:
            return AttackOutcome(
                attack=program.id,
                blocked=True,
                verdicts=tuple(PropertyVerdict(p, True) for p in Property),
                detail=f"secure boot refused: {e}",
            )
    elif program.pre_boot:
        return AttackOutcome(
            attack=program.id,
            blocked=True,
            detail="pre-boot patch attempted after boot",
        )

    body = sim.zone_bodies.get(program.zone)
    if body is None or body.ops != program.runtime:
        sim.zone_bodies[program.zone] = Program(
            ops=program.runtime, trusted=False
        )
    booted_ppc = ppc_boot_init(
        sim.layout, other_masters=sim.config.other_masters
    ).fingerprint()

    sim.run(schedule)
    if schedule is not None:
        sim.run()

    found = check_step(sim, 0)
    problems = [f"{p.value}: {d}" for p, d in found.items()]
    if sim.finished and sim.soc.ppc.fingerprint() != booted_ppc:
        problems.append("partition controller left reconfigured")
    tramp = sim.layout[TRAMPOLINE].start
    line = sim.config.geometry.line_size
    words = [sim.soc.load(tramp + i * line) for i in range(len(sim.pristine))]
    if measure(words) != sim.manifest["trampoline"]:
        problems.append("trampoline modified in memory")

    faults = sum(
        1
        for e in sim.trace.of_kind("FAULT")
        if not e["honest"]
    )
    blocked = not problems
    if not blocked:
        _log.warning("attack %s succeeded: %s", program.id.value, problems)

    return AttackOutcome(
        attack=program.id,
        blocked=blocked,
        verdicts=verdicts(sim, found),
        detail="; ".join(problems) if problems else f"{faults} faults",
        faults=faults,
    )


MUTATION_ATTACKS: Mapping[str, AttackId] = {
    "skip_flush": AttackId.A3_CACHE_LEAK,
    "skip_unlock": AttackId.A1_MAPPING,
    "skip_reconf": AttackId.A1_MAPPING,
    "skip_mmu_off": AttackId.A4_CODE_INJECT,
    "skip_invalidate": AttackId.A4_CODE_INJECT,
    "skip_token_check": AttackId.A2_PPC_HIJACK,
    "skip_coherency_disable": AttackId.A3_CACHE_LEAK,
    "skip_halt": AttackId.A1_MAPPING,
}
"""
For each protocol step, an attack whose scenario breaks a property when the
step is left out.
"""

