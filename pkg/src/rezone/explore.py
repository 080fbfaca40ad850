# SPDX-License-Identifier: MIT

"""
Bounded exhaustive exploration of interleavings.

Every scheduler step is a yield point: a memory access, a message, a lock
operation, or a phase transition.  The explorer walks all orders of those
steps breadth-first up to a depth, merging states with equal fingerprints,
and checks the properties after every transition.  Breadth-first order
makes every witness a shortest one.
"""

from __future__ import annotations

import logging

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

from ._utils import _check_types, env_int
from .adversary import Property, PropertyVerdict, check_step
from .exceptions import BudgetExceeded
from .monitor import ENTRY_CHAIN, EXIT_CHAIN, Simulator


__all__ = [
    "DEFAULT_BUDGET",
    "ExplorationReport",
    "explore",
    "replay",
]

_log = logging.getLogger(__name__)

DEFAULT_BUDGET = 200_000

SimFactory = Callable[[], Simulator]


@dataclass
class ExplorationReport:
    """
    Attributes:
        scenario: Label of what was explored.

        depth: The step bound.

        states: Distinct states visited.

        transitions: Steps taken, including ones into known states.

        violations: The shortest witness per broken property.

        coverage:
            Protocol phases seen on any path.  ``uncovered`` lists the
            chain phases never reached.

        complete:
            Whether every path ended before *depth*.  If not, the result
            only speaks for schedules up to *depth* steps.
    """

    scenario: str
    depth: int
    states: int = 0
    transitions: int = 0
    violations: dict[Property, PropertyVerdict] = field(default_factory=dict)
    coverage: set[str] = field(default_factory=set)
    complete: bool = True

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def uncovered(self) -> list[str]:
        chain = [p.value for p in (*ENTRY_CHAIN, *EXIT_CHAIN)]
        return sorted(set(chain) - self.coverage)

    def verdicts(self) -> tuple[PropertyVerdict, ...]:
        return tuple(
            self.violations.get(p, PropertyVerdict(p, holds=True))
            for p in Property
        )

    def to_record(self) -> dict[str, object]:
        return {
            "scenario": self.scenario,
            "depth": self.depth,
            "states": self.states,
            "transitions": self.transitions,
            "complete": self.complete,
            "coverage": sorted(self.coverage),
            "properties": [v.to_record() for v in self.verdicts()],
        }


def explore(
    sim_factory: SimFactory,
    depth: int,
    *,
    scenario: str = "",
    budget: int | None = None,
    stop_at_first: bool = False,
) -> ExplorationReport:
    """
    Explore every interleaving of the simulator *sim_factory* builds, up to
    *depth* steps.

    Args:
        sim_factory: Returns a fresh, booted simulator.

        depth: Maximum schedule length.

        scenario: Label for the report.

        budget:
            Maximum number of distinct states.  Defaults to the
            ``REZONE_SIM_BUDGET`` environment variable, or
            :data:`DEFAULT_BUDGET`.

        stop_at_first: Return as soon as any property is violated.

    Raises:
        rezone.exceptions.BudgetExceeded: If *budget* states don't suffice.
    """
    e = _check_types(depth=(depth, int), scenario=(scenario, str))
    if e:
        raise TypeError(e)
    if depth < 0:
        msg = "'depth' must not be negative"
        raise ValueError(msg)
    if budget is None:
        budget = env_int("REZONE_SIM_BUDGET", DEFAULT_BUDGET)

    root = sim_factory()
    report = ExplorationReport(scenario=scenario, depth=depth)

    def record(sim: Simulator, mark: int) -> None:
        for prop, detail in check_step(sim, mark).items():
            if prop not in report.violations:
                _log.info("%s: %s violated: %s", scenario, prop.value, detail)
                report.violations[prop] = PropertyVerdict(
                    property=prop,
                    holds=False,
                    detail=detail,
                    schedule=tuple(sim.schedule),
                    witness=tuple(sim.trace),
                )

    record(root, 0)
    seen = {root.fingerprint()}
    frontier: deque[tuple[Simulator, int]] = deque([(root, 0)])
    report.states = 1

    while frontier:
        sim, level = frontier.popleft()
        actors = sim.enabled_actors()
        if not actors:
            continue
        if level >= depth:
            report.complete = False
            continue

        for actor in actors:
            child = sim.clone()
            mark = len(child.trace)
            child.step(actor)
            report.transitions += 1
            report.coverage.update(
                e["phase"] for e in child.trace.since(mark) if e.kind == "PHASE"
            )
            record(child, mark)
            if stop_at_first and report.violations:
                return report

            fp = child.fingerprint()
            if fp in seen:
                continue
            seen.add(fp)
            report.states += 1
            if report.states > budget:
                msg = (
                    f"{scenario or 'exploration'} exceeded {budget} states "
                    f"at depth {level + 1}"
                )
                raise BudgetExceeded(msg)
            frontier.append((child, level + 1))

    _log.debug(
        "%s: %d states, %d transitions, %d violations",
        scenario,
        report.states,
        report.transitions,
        len(report.violations),
    )

    return report


def replay(sim_factory: SimFactory, schedule: Iterable[str]) -> Simulator:
    """
    Rerun *schedule* on a fresh simulator, e.g. to inspect a witness.
    """
    return sim_factory().run(schedule)
