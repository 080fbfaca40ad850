# SPDX-License-Identifier: MIT

import pytest

from rezone.adversary import (
    MUTATION_ATTACKS,
    POISON,
    AttackId,
    Property,
    attack_program,
    attack_simulator,
    check_events,
    check_state,
    run_attack,
    verdicts,
)
from rezone.cpu import CacheLine
from rezone.explore import explore, replay
from rezone.monitor import Mutations, SimConfig
from rezone.programs import PreBootPatch
from rezone.sync import run_random
from rezone.topology import GATEKEEPER, REE
from rezone.trace import Trace


# Core 1 runs first and leaves REE lines in its private cache.
C1_FIRST = ("c1", "c1")


def attack(attack_id, *, mutations=None, schedule=None):
    sim = attack_simulator(attack_id, mutations=mutations)
    return run_attack(sim, attack_program(attack_id, sim), schedule)


def violated(outcome):
    return {v.property for v in outcome.verdicts if not v.holds}


def booted_factory(attack_id, mutations=None):
    def factory():
        sim = attack_simulator(attack_id, mutations=mutations)
        sim.boot()
        return sim

    return factory


def tainted_fetches(events):
    return [e for e in events if e.kind == "EL3_EXEC" and e["tainted"]]


def enter_attacker_zone(sim):
    """
    Step core 0 and the gatekeeper until the attacker's zone is active.
    """
    while sim.soc.active_zone is None:
        sim.step("gk" if "gk" in sim.enabled_actors() else "c0")


class TestAttackPrograms:
    def test_a5_is_pre_boot_only(self):
        """
        Tampering with the TCB happens before boot and nothing at runtime.
        """
        sim = attack_simulator(AttackId.A5_TCB_TAMPER)

        program = attack_program(AttackId.A5_TCB_TAMPER, sim)

        assert (PreBootPatch("trampoline", 0, POISON),) == program.pre_boot
        assert () == program.runtime

    def test_attacker_is_untrusted(self):
        """
        The attacker's zone body doesn't count as honest code.
        """
        sim = attack_simulator(AttackId.A1_MAPPING)

        assert not sim.zone_bodies[1].trusted
        assert sim.zone_bodies[2].trusted
        assert not sim.booted


class TestBaseline:
    @pytest.mark.parametrize("attack_id", list(AttackId))
    def test_blocked(self, attack_id):
        """
        With the full protocol every attack is blocked and every property
        holds.
        """
        outcome = attack(attack_id)

        assert outcome.blocked, outcome.detail
        assert set() == violated(outcome)

    @pytest.mark.parametrize(
        "attack_id", [a for a in AttackId if a is not AttackId.A5_TCB_TAMPER]
    )
    def test_blocked_after_normal_world_ran(self, attack_id):
        """
        Data other cores cached before the entry doesn't help either.
        """
        outcome = attack(attack_id, schedule=C1_FIRST)

        assert outcome.blocked, outcome.detail

    def test_attacker_faults_counted(self):
        """
        Denied attempts show up as faults, not as safety violations.
        """
        outcome = attack(AttackId.A1_MAPPING)

        assert outcome.faults >= 3
        assert "faults" in outcome.detail

    def test_secure_boot_stops_a5(self):
        """
        A tampered trampoline never boots.
        """
        outcome = attack(AttackId.A5_TCB_TAMPER)

        assert "secure boot refused" in outcome.detail

    def test_pre_boot_patch_after_boot(self):
        """
        A booted system can't be patched.
        """
        sim = attack_simulator(AttackId.A5_TCB_TAMPER)
        program = attack_program(AttackId.A5_TCB_TAMPER, sim)
        sim.boot()

        outcome = run_attack(sim, program)

        assert outcome.blocked
        assert "after boot" in outcome.detail

    def test_record(self):
        """
        Outcomes serialize for reports.
        """
        rec = attack(AttackId.A2_PPC_HIJACK).to_record()

        assert "blocked" == rec["outcome"]
        assert ["P1", "P2", "P3", "SAFETY"] == [
            p["property"] for p in rec["properties"]
        ]


class TestMutants:
    @pytest.mark.parametrize(
        ("mutation", "attack_id"),
        [
            (m, a)
            for m, a in MUTATION_ATTACKS.items()
            if m not in ("skip_coherency_disable", "skip_halt")
        ],
    )
    def test_attack_succeeds(self, mutation, attack_id):
        """
        Leaving out any protocol step lets the attack aimed at it through.
        """
        outcome = attack(attack_id, mutations=Mutations.only(mutation))

        assert not outcome.blocked

    def test_unhalted_core_runs_under_the_zone_row(self):
        """
        A core that keeps running while a zone is active loses access to
        normal-world memory and faults.
        """
        sim = attack_simulator(
            AttackId.A1_MAPPING, mutations=Mutations.only("skip_halt")
        )
        program = attack_program(AttackId.A1_MAPPING, sim)
        sim.boot()
        enter_attacker_zone(sim)

        outcome = run_attack(sim, program, ["c1"])

        assert not outcome.blocked
        assert Property.SAFETY in violated(outcome)
        assert [
            e
            for e in sim.trace.of_kind("FAULT")
            if e["core"] == 1 and e["honest"]
        ]

    def test_halted_core_waits_for_the_zone(self):
        """
        With halting in place the same schedule isn't even possible: core 1
        is parked while the zone runs.
        """
        sim = attack_simulator(AttackId.A1_MAPPING)
        sim.boot()
        enter_attacker_zone(sim)

        assert "c1" not in sim.enabled_actors()
        assert sim.soc.cluster.cores[1].halted

    def test_coherency_needs_a_remote_line(self):
        """
        Snooping only leaks once another core holds the data.
        """
        mutant = Mutations.only("skip_coherency_disable")

        outcome = attack(
            AttackId.A3_CACHE_LEAK, mutations=mutant, schedule=C1_FIRST
        )

        assert not outcome.blocked
        assert Property.P1 in violated(outcome)

    @pytest.mark.parametrize(
        ("mutation", "attack_id", "prop"),
        [
            ("skip_flush", AttackId.A3_CACHE_LEAK, Property.P1),
            ("skip_token_check", AttackId.A2_PPC_HIJACK, Property.P2),
            ("skip_invalidate", AttackId.A4_CODE_INJECT, Property.P2),
            ("skip_mmu_off", AttackId.A1_MAPPING, Property.SAFETY),
            ("skip_mmu_off", AttackId.A4_CODE_INJECT, Property.P2),
            ("skip_reconf", AttackId.A1_MAPPING, Property.P1),
        ],
    )
    def test_broken_property(self, mutation, attack_id, prop):
        """
        Each mutant breaks the property its step protects.
        """
        outcome = attack(attack_id, mutations=Mutations.only(mutation))

        assert prop in violated(outcome)
        (v,) = [v for v in outcome.verdicts if v.property is prop]
        assert v.schedule
        assert v.witness

    def test_attacks_cover_mutations(self):
        """
        Every mutation with an attack is a real mutation.
        """
        assert set(MUTATION_ATTACKS) <= set(Mutations.names())


class TestInjectedTrampoline:
    def test_fair_run_executes_poison(self):
        """
        With EL3 still translating, the attacker's cached write to the
        trampoline is what the monitor runs on the way out.
        """
        sim = attack_simulator(
            AttackId.A4_CODE_INJECT, mutations=Mutations.only("skip_mmu_off")
        )

        run_attack(sim, attack_program(AttackId.A4_CODE_INJECT, sim))

        assert tainted_fetches(sim.trace)

    @pytest.mark.slow
    def test_mitigated_under_every_interleaving(self):
        """
        Turning the EL3 MMU off keeps every interleaving to depth 60 clean.
        """
        report = explore(
            booted_factory(AttackId.A4_CODE_INJECT),
            60,
            scenario="a4",
        )

        assert report.ok, report.violations

    @pytest.mark.slow
    def test_unmitigated_has_replayable_witness(self):
        """
        Without the MMU switch the explorer finds a tainted fetch, and
        rerunning its schedule shows the same thing.
        """
        factory = booted_factory(
            AttackId.A4_CODE_INJECT, Mutations.only("skip_mmu_off")
        )

        report = explore(factory, 60, scenario="a4")

        assert Property.P2 in report.violations
        v = report.violations[Property.P2]
        assert tainted_fetches(v.witness)
        assert tainted_fetches(replay(factory, v.schedule).trace)


class TestTokenGuessing:
    def booted(self, bits=12):
        for seed in range(16):
            sim = attack_simulator(
                AttackId.A2_PPC_HIJACK, SimConfig(token_bits=bits, seed=seed)
            )
            sim.boot()
            if sim.gk.token > 0:
                return sim
        pytest.fail("no seed gives a non-zero token")

    def test_wrong_guesses_are_refused(self):
        """
        Every wrong claim is answered with a NACK and counted, and the
        controller stays locked.
        """
        sim = self.booted()
        guesses = sim.gk.token
        program = attack_program(
            AttackId.A2_PPC_HIJACK, sim, guesses=guesses
        )

        outcome = run_attack(sim, program)

        nacks = [
            e for e in sim.trace.of_kind("MQ_REPLY") if e["message"] == "NACK"
        ]
        assert outcome.blocked, outcome.detail
        assert guesses == len(nacks)
        assert guesses == sim.gk.auth_failures
        assert sim.soc.ppc.locked

    @pytest.mark.slow
    def test_exhaustive_guessing_wins(self):
        """
        A short token falls to enumeration: the first correct claim unlocks
        the controller for the attacker.
        """
        sim = self.booted()
        token = sim.gk.token
        program = attack_program(AttackId.A2_PPC_HIJACK, sim, guesses=2**12)

        outcome = run_attack(sim, program)

        assert not outcome.blocked
        assert Property.P2 in violated(outcome)
        assert token == sim.gk.auth_failures


class TestChecks:
    def test_fresh_system_is_clean(self):
        """
        Nothing is violated before anything ran.
        """
        sim = attack_simulator(AttackId.A1_MAPPING)
        sim.boot()

        assert all(v.holds for v in verdicts(sim))

    def test_zone_reading_ree(self):
        """
        An allowed zone-context access to REE breaks P1.
        """
        sim = attack_simulator(AttackId.A1_MAPPING)
        trace = Trace()
        trace.emit(
            "MEM",
            core=0,
            el=1,
            world="SECURE",
            zone=1,
            va=0,
            pa=sim.addr(REE),
            ns=1,
            region=str(REE),
            access="read",
            fetch=False,
            hit="miss",
            verdict="allow",
            value=0,
        )

        assert {Property.P1} == set(check_events(sim, trace))

    def test_normal_world_reading_ree(self):
        """
        The same access from the normal world is fine.
        """
        sim = attack_simulator(AttackId.A1_MAPPING)
        trace = Trace()
        trace.emit(
            "MEM",
            core=0,
            el=1,
            world="NORMAL",
            zone=None,
            va=0,
            pa=sim.addr(REE),
            ns=1,
            region=str(REE),
            access="read",
            fetch=False,
            hit="miss",
            verdict="allow",
            value=0,
        )

        assert {} == check_events(sim, trace)

    def test_config_outside_reconf(self):
        """
        A cluster write to the controller outside D and D' breaks P2.
        """
        sim = attack_simulator(AttackId.A1_MAPPING)
        trace = Trace()
        trace.phase = "IN_ZONE"
        trace.emit("PPC_CONFIG", requester=0, edit="set_lock(false)", applied=True)
        trace.phase = "D"
        trace.emit("PPC_CONFIG", requester=0, edit="set_lock(true)", applied=True)

        found = check_events(sim, trace)

        assert {Property.P2} == set(found)
        assert "IN_ZONE" in found[Property.P2]

    def test_cached_token(self):
        """
        A gatekeeper line in any cache breaks P2.
        """
        sim = attack_simulator(AttackId.A1_MAPPING)
        sim.boot()
        sim.soc.cluster.cores[0].l1.put(CacheLine(sim.addr(GATEKEEPER), 0, 1))

        assert Property.P2 in check_state(sim)


@pytest.mark.slow
class TestSweeps:
    @pytest.mark.parametrize(
        "attack_id", [a for a in AttackId if a is not AttackId.A5_TCB_TAMPER]
    )
    def test_blocked_under_1000_schedules(self, attack_id):
        """
        No random interleaving of the attacker and the other cores gets an
        attack through.
        """
        for seed in range(1000):
            sim = attack_simulator(attack_id)
            program = attack_program(attack_id, sim)
            sim.boot()
            run_random(sim, seed)

            outcome = run_attack(sim, program, ())

            assert outcome.blocked, (seed, outcome.detail)

    @pytest.mark.parametrize(
        "attack_id", [a for a in AttackId if a is not AttackId.A5_TCB_TAMPER]
    )
    def test_blocked_under_every_interleaving(self, attack_id):
        """
        Exhaustive exploration of two cores to depth 30 finds no violation.
        """

        def booted():
            sim = attack_simulator(attack_id)
            sim.boot()
            return sim

        report = explore(booted, 30, scenario=attack_id.value)

        assert report.ok, report.violations

    @pytest.mark.parametrize(
        ("mutation", "attack_id"), list(MUTATION_ATTACKS.items())
    )
    def test_explorer_finds_every_mutant(self, mutation, attack_id):
        """
        Exhaustive exploration catches each missing protocol step.
        """
        factory = booted_factory(attack_id, Mutations.only(mutation))

        report = explore(factory, 60, scenario=mutation, stop_at_first=True)

        assert not report.ok, mutation
