# SPDX-License-Identifier: MIT

"""
Scenario documents: loading, validation, and running.

A scenario is a YAML document describing a system (configuration, zones,
core programs, zone bodies), optionally an attack, a sync scenario, or a
cost workload, plus how to schedule it.  See ``docs/scenario-format.md``.
"""

from __future__ import annotations

import json
import logging
import re

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml

from ._utils import _check_types
from .adversary import (
    AttackId,
    AttackOutcome,
    Property,
    PropertyVerdict,
    attack_program,
    attack_simulator,
    run_attack,
    two_zones,
    verdicts,
)
from .cost import (
    ComparisonRow,
    ComparisonTable,
    CostWeights,
    account,
    compare,
    workloads,
)
from .cpu import CacheGeometry
from .exceptions import RezoneError, ScenarioError, SecureBootError
from .explore import ExplorationReport, explore
from .gatekeeper import MsgKind
from .monitor import Deployment, Mutations, SimConfig, Simulator
from .ppc import SetLock, SetPerm
from .profiles import by_name
from .programs import (
    MU_A_VA,
    PPC_VA,
    SHARED_VA,
    TRAMPOLINE_VA,
    ZONE_VA_BASE,
    EnterZone,
    Fetch,
    GuessToken,
    Irq,
    Map,
    MonitorWork,
    Op,
    PpcWrite,
    PreBootPatch,
    Program,
    Read,
    ReadTokenReg,
    SendMq,
    Sleep,
    Smc,
    Start,
    Work,
    Write,
)
from .sync import (
    SCENARIOS,
    run_fair,
    run_random,
    sync_scenario,
    sync_simulator,
)
from .topology import (
    Kind,
    LayoutConfig,
    MemoryLayout,
    Permission,
    RegionKind,
    build_layout,
)
from .trace import Trace
from .zones import ZoneManifest, ZoneRegistry, register_zone


__all__ = [
    "MODES",
    "ScenarioResult",
    "ScenarioSpec",
    "load_scenario",
    "parse_scenario",
    "run",
]

_log = logging.getLogger(__name__)

MODES = ("fixed", "fair", "random", "exhaustive")

_VIRTUAL = {
    "ZONE_VA": ZONE_VA_BASE,
    "SHARED_VA": SHARED_VA,
    "TRAMPOLINE_VA": TRAMPOLINE_VA,
    "MU_A_VA": MU_A_VA,
    "PPC_VA": PPC_VA,
}
_SYMBOL = re.compile(
    r"^\s*(?P<name>[A-Z_]+)(?:\((?P<index>\d+)\))?\s*"
    r"(?:(?P<sign>[+-])\s*(?P<offset>\w+))?\s*$"
)


@dataclass(frozen=True)
class ScenarioSpec:
    """
    A validated scenario.

    Attributes:
        name: Label used in reports.

        config: The system configuration.

        zones: Zone manifests.

        programs: Core programs by core id.

        zone_bodies: Zone bodies by zone id.

        attack: Run this attack instead of *programs*.

        sync: Run this sync scenario instead of *programs*.

        workload: Compare deployments on this bundled cost workload.

        mode: One of :data:`MODES`.

        schedule: Actor sequence for ``fixed`` mode.

        depth: Step bound for ``exhaustive`` mode.

        runs: Number of schedules for ``random`` mode.

        expect_violated:
            Properties the scenario is meant to break; every other property
            must hold.

        outputs: Default output paths by name (``trace``, ``report``,
            ``cost``).
    """

    name: str
    config: SimConfig
    zones: tuple[ZoneManifest, ...]
    programs: Mapping[int, Program] = field(default_factory=dict)
    zone_bodies: Mapping[int, Program] = field(default_factory=dict)
    attack: AttackId | None = None
    sync: int | None = None
    workload: str | None = None
    mode: str = "fair"
    schedule: tuple[str, ...] = ()
    depth: int = 40
    runs: int = 1
    expect_violated: frozenset[Property] = frozenset()
    weights: CostWeights = field(default_factory=CostWeights)
    outputs: Mapping[str, str] = field(default_factory=dict)

    def with_overrides(
        self,
        *,
        depth: int | None = None,
        seed: int | None = None,
        deployment: Deployment | None = None,
        exhaustive: bool = False,
    ) -> ScenarioSpec:
        """
        Apply command line overrides.
        """
        spec = self
        if depth is not None:
            spec = replace(spec, depth=depth)
        if seed is not None:
            spec = replace(spec, config=replace(spec.config, seed=seed))
        if deployment is not None:
            spec = replace(
                spec, config=replace(spec.config, deployment=deployment)
            )
        if exhaustive:
            spec = replace(spec, mode="exhaustive")

        return spec


@dataclass
class ScenarioResult:
    """
    What :func:`run` found.

    Attributes:
        spec: The scenario that ran.

        verdicts: One per property.

        trace: Trace of the representative run.

        attack: The attack outcome, if an attack ran.

        exploration: The exploration report in ``exhaustive`` mode.

        cost: Cost comparison.

        runs: Number of runs that were judged.
    """

    spec: ScenarioSpec
    verdicts: tuple[PropertyVerdict, ...]
    trace: Trace
    attack: AttackOutcome | None = None
    exploration: ExplorationReport | None = None
    cost: ComparisonTable | None = None
    runs: int = 1

    @property
    def ok(self) -> bool:
        """
        Whether every asserted property holds and every expected violation
        happened.
        """
        for v in self.verdicts:
            if v.holds == (v.property in self.spec.expect_violated):
                return False
        return self.attack is None or self.attack.blocked or bool(
            self.spec.expect_violated
        )

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1

    def to_report(self) -> dict[str, Any]:
        spec = self.spec
        report: dict[str, Any] = {
            "scenario": spec.name,
            "mode": spec.mode,
            "deployment": spec.config.deployment.value,
            "seed": spec.config.seed,
            "mutations": list(spec.config.mutations.active),
            "runs": self.runs,
            "ok": self.ok,
            "expect_violated": sorted(p.value for p in spec.expect_violated),
            "properties": [v.to_record() for v in self.verdicts],
        }
        if self.attack is not None:
            report["attack"] = self.attack.to_record()
        if self.exploration is not None:
            report["exploration"] = self.exploration.to_record()
        if self.cost is not None:
            report["cost"] = self.cost.to_records()

        return report

    def write(
        self,
        *,
        trace: str | Path | None = None,
        report: str | Path | None = None,
        cost: str | Path | None = None,
    ) -> None:
        """
        Write the trace log (JSON lines), the property report (JSON), and
        the cost table (CSV) to the given paths, falling back to the
        scenario's own ``outputs``.
        """
        outs = self.spec.outputs
        trace = trace or outs.get("trace")
        report = report or outs.get("report")
        cost = cost or outs.get("cost")
        if trace:
            Path(trace).write_text(self.trace.to_jsonl(), encoding="utf-8")
        if report:
            Path(report).write_text(
                json.dumps(self.to_report(), indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
        if cost and self.cost is not None:
            Path(cost).write_text(self.cost.to_csv(), encoding="utf-8")


# -- parsing ---------------------------------------------------------------


def _int(value: Any, where: str) -> int:
    if isinstance(value, bool):
        raise ScenarioError(where, "expected an integer, got a boolean")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value.replace("_", ""), 0)
        except ValueError:
            pass
    raise ScenarioError(where, f"expected an integer, got {value!r}")


def _bool(value: Any, where: str) -> bool:
    error = _check_types(value=(value, bool))
    if error is not None:
        raise ScenarioError(where, error)
    return bool(value)


def _mapping(value: Any, where: str) -> Mapping[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ScenarioError(where, "expected a mapping")
    return value


def _list(value: Any, where: str) -> list[Any]:
    if value is None:
        return []
    if not isinstance(value, list):
        raise ScenarioError(where, "expected a list")
    return value


def _reject_unknown(
    doc: Mapping[str, Any], allowed: set[str], where: str
) -> None:
    for key in doc:
        if key not in allowed:
            path = f"{where}.{key}" if where else str(key)
            raise ScenarioError(path, "unknown field")


def _region(name: str, index: str | None, where: str) -> RegionKind:
    try:
        kind = Kind[name]
    except KeyError:
        raise ScenarioError(where, f"unknown region {name!r}") from None
    if kind in (Kind.ZONE, Kind.PERIPHERAL):
        if index is None:
            raise ScenarioError(where, f"{name} needs an index, e.g. {name}(1)")
        return RegionKind(kind, int(index))
    if index is not None:
        raise ScenarioError(where, f"{name} takes no index")
    return RegionKind(kind)


def _address(value: Any, layout: MemoryLayout, where: str) -> int:
    """
    An integer, or ``NAME[+offset]`` where NAME is a region (``REE``,
    ``ZONE(2)``) or a virtual base (``ZONE_VA``, ``PPC_VA``).
    """
    if not isinstance(value, str) or value.strip()[:1].isdigit():
        return _int(value, where)

    m = _SYMBOL.match(value)
    if m is None:
        raise ScenarioError(where, f"can't parse address {value!r}")
    offset = 0
    if m["offset"] is not None:
        offset = _int(m["offset"], where)
        if m["sign"] == "-":
            offset = -offset

    name = m["name"]
    if name in _VIRTUAL and m["index"] is None:
        return _VIRTUAL[name] + offset
    kind = _region(name, m["index"], where)
    if kind not in layout:
        raise ScenarioError(where, f"{kind} isn't part of this system")

    return layout[kind].start + offset


def _edit(doc: Any, where: str) -> SetPerm | SetLock:
    doc = _mapping(doc, where)
    if "set_lock" in doc:
        _reject_unknown(doc, {"set_lock"}, where)
        return SetLock(_bool(doc["set_lock"], f"{where}.set_lock"))
    _reject_unknown(doc, {"domain", "region", "perm"}, where)
    raw = str(doc.get("region", ""))
    m = _SYMBOL.match(raw)
    if m is None or m["offset"] is not None:
        raise ScenarioError(f"{where}.region", f"expected a region, got {raw!r}")
    try:
        perm = Permission[str(doc.get("perm", "")).upper()]
    except KeyError:
        raise ScenarioError(
            f"{where}.perm", "expected one of NA, RO, RW"
        ) from None

    return SetPerm(
        _int(doc.get("domain", 0), f"{where}.domain"),
        _region(m["name"], m["index"], f"{where}.region"),
        perm,
    )


def _op(  # noqa: C901
    raw: Any, layout: MemoryLayout, zone_ids: set[int], where: str
) -> Op:
    if isinstance(raw, str):
        name, arg = raw, None
    elif isinstance(raw, Mapping) and len(raw) == 1:
        ((name, arg),) = raw.items()
    else:
        raise ScenarioError(where, "an op is a name or a one-key mapping")
    where = f"{where}.{name}"

    def addr(v: Any, sub: str = "") -> int:
        return _address(v, layout, f"{where}.{sub}" if sub else where)

    def kw(allowed: set[str]) -> Mapping[str, Any]:
        doc = _mapping(arg, where)
        _reject_unknown(doc, allowed, where)
        return doc

    if name == "read":
        if isinstance(arg, Mapping):
            doc = kw({"addr", "via_mmu"})
            return Read(
                addr(doc.get("addr"), "addr"),
                _bool(doc.get("via_mmu", True), f"{where}.via_mmu"),
            )
        return Read(addr(arg))
    if name == "write":
        doc = kw({"addr", "value", "via_mmu"})
        return Write(
            addr(doc.get("addr"), "addr"),
            _int(doc.get("value", 0), f"{where}.value"),
            _bool(doc.get("via_mmu", True), f"{where}.via_mmu"),
        )
    if name == "fetch":
        return Fetch(addr(arg))
    if name == "smc":
        return Smc(_int(arg, where))
    if name == "sleep":
        return Sleep()
    if name == "monitor_work":
        return MonitorWork() if arg is None else MonitorWork(_int(arg, where))
    if name == "enter_zone":
        zone = _int(arg, where)
        if zone not in zone_ids:
            raise ScenarioError(where, f"zone {zone} isn't declared")
        return EnterZone(zone)
    if name == "map":
        doc = kw({"va", "pa", "ns", "writable"})
        return Map(
            addr(doc.get("va"), "va"),
            addr(doc.get("pa"), "pa"),
            _int(doc.get("ns", 0), f"{where}.ns"),
            _bool(doc.get("writable", True), f"{where}.writable"),
        )
    if name == "send_mq":
        doc = kw({"kind", "token_claim", "va"})
        try:
            kind = MsgKind[str(doc.get("kind", ""))]
        except KeyError:
            raise ScenarioError(
                f"{where}.kind", "expected UNLOCK_PPC or LOCK_PPC"
            ) from None
        return SendMq(
            kind,
            _int(doc.get("token_claim", 0), f"{where}.token_claim"),
            addr(doc.get("va", MU_A_VA), "va"),
        )
    if name == "guess_token":
        if isinstance(arg, Mapping):
            doc = kw({"attempts", "start"})
            return GuessToken(
                _int(doc.get("attempts"), f"{where}.attempts"),
                _int(doc.get("start", 0), f"{where}.start"),
            )
        return GuessToken(_int(arg, where))
    if name == "read_token_reg":
        return ReadTokenReg()
    if name == "ppc_write":
        doc = kw({"va", "edit"})
        return PpcWrite(
            addr(doc.get("va", PPC_VA), "va"),
            _edit(doc.get("edit"), f"{where}.edit"),
        )
    if name == "irq":
        return Irq()
    if name == "work":
        return Work() if arg is None else Work(_int(arg, where))
    if name == "pre_boot_patch":
        doc = kw({"image", "index", "value"})
        return PreBootPatch(
            str(doc.get("image", "trampoline")),
            _int(doc.get("index", 0), f"{where}.index"),
            _int(doc.get("value", 0), f"{where}.value"),
        )

    raise ScenarioError(where, "unknown op")


def _program(
    raw: Any,
    layout: MemoryLayout,
    zone_ids: set[int],
    where: str,
    *,
    trusted: bool = True,
) -> Program:
    doc = _mapping(raw, where)
    _reject_unknown(doc, {"start", "ops", "trusted"}, where)
    try:
        start = Start(str(doc.get("start", "normal")))
    except ValueError:
        raise ScenarioError(
            f"{where}.start", "expected normal, el3 or sleeping"
        ) from None
    ops = tuple(
        _op(o, layout, zone_ids, f"{where}.ops.{i}")
        for i, o in enumerate(_list(doc.get("ops"), f"{where}.ops"))
    )

    return Program(
        ops=ops,
        start=start,
        trusted=_bool(doc.get("trusted", trusted), f"{where}.trusted"),
    )


def _config(raw: Any) -> SimConfig:
    doc = _mapping(raw, "config")
    _reject_unknown(
        doc,
        {
            "deployment",
            "seed",
            "token_bits",
            "other_masters",
            "geometry",
            "layout",
            "mutations",
        },
        "config",
    )

    try:
        deployment = Deployment(str(doc.get("deployment", "rz")))
    except ValueError:
        raise ScenarioError(
            "config.deployment", "expected norz, rz or rz-noirq"
        ) from None

    geo = doc.get("geometry", "default")
    try:
        if isinstance(geo, str):
            geometry = by_name(geo)
        else:
            g = _mapping(geo, "config.geometry")
            geometry = CacheGeometry(
                **{k: _int(v, f"config.geometry.{k}") for k, v in g.items()}
            )
    except ScenarioError:
        raise
    except KeyError:
        raise ScenarioError(
            "config.geometry", f"unknown geometry profile {geo!r}"
        ) from None
    except (TypeError, ValueError) as e:
        raise ScenarioError("config.geometry", str(e)) from None

    lay = _mapping(doc.get("layout"), "config.layout")
    try:
        layout = LayoutConfig(
            **{k: _int(v, f"config.layout.{k}") for k, v in lay.items()}
        )
    except ScenarioError:
        raise
    except (TypeError, ValueError) as e:
        raise ScenarioError("config.layout", str(e)) from None

    names = _list(doc.get("mutations"), "config.mutations")
    for i, n in enumerate(names):
        if n not in Mutations.names():
            raise ScenarioError(
                f"config.mutations.{i}", f"unknown mutation {n!r}"
            )

    try:
        return SimConfig(
            layout=layout,
            geometry=geometry,
            deployment=deployment,
            token_bits=_int(doc.get("token_bits", 64), "config.token_bits"),
            seed=_int(doc.get("seed", 0), "config.seed"),
            other_masters=_bool(
                doc.get("other_masters", False), "config.other_masters"
            ),
            mutations=Mutations(**dict.fromkeys(names, True)),
        )
    except ScenarioError:
        raise
    except (TypeError, ValueError) as e:
        raise ScenarioError("config", str(e)) from None


def _zones(raw: Any, config: SimConfig) -> tuple[ZoneManifest, ...]:
    items = _list(raw, "zones")
    if not items:
        return two_zones()

    reg = ZoneRegistry(peripherals=config.layout.peripherals)
    for i, z in enumerate(items):
        where = f"zones.{i}"
        doc = _mapping(z, where)
        _reject_unknown(
            doc, {"id", "mem_size", "smc_range", "peripherals"}, where
        )
        smc = _list(doc.get("smc_range"), f"{where}.smc_range")
        if len(smc) != 2:  # noqa: PLR2004
            raise ScenarioError(f"{where}.smc_range", "expected [first, end]")
        try:
            reg = register_zone(
                reg,
                ZoneManifest(
                    zone_id=_int(doc.get("id", i + 1), f"{where}.id"),
                    mem_size=_int(doc.get("mem_size", 4096), f"{where}.mem_size"),
                    smc_range=(
                        _int(smc[0], f"{where}.smc_range.0"),
                        _int(smc[1], f"{where}.smc_range.1"),
                    ),
                    peripheral_whitelist=frozenset(
                        _int(p, f"{where}.peripherals")
                        for p in _list(doc.get("peripherals"), f"{where}.peripherals")
                    ),
                ),
            )
        except ScenarioError:
            raise
        except (RezoneError, TypeError, ValueError) as e:
            raise ScenarioError(where, str(e)) from None

    return reg.manifests


def parse_scenario(doc: Any, *, name: str = "") -> ScenarioSpec:  # noqa: C901
    """
    Validate a parsed YAML document.

    Raises:
        rezone.exceptions.ScenarioError: Naming the first offending field.
    """
    doc = _mapping(doc, "<document>")
    _reject_unknown(
        doc,
        {
            "name",
            "config",
            "zones",
            "cores",
            "zone_bodies",
            "attack",
            "sync",
            "workload",
            "schedule",
            "expect",
            "weights",
            "outputs",
        },
        "",
    )
    config = _config(doc.get("config"))
    zones = _zones(doc.get("zones"), config)
    zone_ids = {z.zone_id for z in zones}
    try:
        layout = build_layout(zones, config.layout)
    except RezoneError as e:
        raise ScenarioError("config.layout", str(e)) from None

    programs = {}
    cores = doc.get("cores")
    if isinstance(cores, Mapping):
        entries = [(_int(k, "cores"), v) for k, v in cores.items()]
    else:
        entries = list(enumerate(_list(cores, "cores")))
    for core, prog in entries:
        if not 0 <= core < config.geometry.cores:
            raise ScenarioError(
                f"cores.{core}",
                f"the cluster has {config.geometry.cores} cores",
            )
        programs[core] = _program(prog, layout, zone_ids, f"cores.{core}")

    bodies = {}
    for k, body in _mapping(doc.get("zone_bodies"), "zone_bodies").items():
        zone = _int(k, "zone_bodies")
        if zone not in zone_ids:
            raise ScenarioError(f"zone_bodies.{k}", f"zone {zone} isn't declared")
        bodies[zone] = _program(body, layout, zone_ids, f"zone_bodies.{k}")

    attack = None
    if doc.get("attack") is not None:
        try:
            attack = AttackId(str(doc["attack"]).upper())
        except ValueError:
            raise ScenarioError(
                "attack", f"expected one of {[a.value for a in AttackId]}"
            ) from None
        if not {1, 2} <= zone_ids:
            raise ScenarioError("zones", "attacks need zones 1 and 2")

    sync = None
    if doc.get("sync") is not None:
        sync = _int(doc["sync"], "sync")
        if sync not in SCENARIOS:
            raise ScenarioError("sync", "expected 1, 2 or 3")
        if 1 not in zone_ids:
            raise ScenarioError("zones", "sync scenarios need zone 1")

    workload = doc.get("workload")
    if workload is not None and workload not in workloads():
        raise ScenarioError(
            "workload", f"expected one of {sorted(workloads())}"
        )
    if sum(x is not None for x in (attack, sync, workload)) > 1:
        raise ScenarioError("attack", "pick one of attack, sync, workload")

    sched = _mapping(doc.get("schedule"), "schedule")
    _reject_unknown(sched, {"mode", "actors", "depth", "runs"}, "schedule")
    mode = str(sched.get("mode", "fair"))
    if mode not in MODES:
        raise ScenarioError("schedule.mode", f"expected one of {list(MODES)}")
    actors = tuple(str(a) for a in _list(sched.get("actors"), "schedule.actors"))
    for i, a in enumerate(actors):
        if a != "gk" and not re.fullmatch(r"c\d+", a):
            raise ScenarioError(f"schedule.actors.{i}", f"unknown actor {a!r}")

    expect = _mapping(doc.get("expect"), "expect")
    _reject_unknown(expect, {"violated"}, "expect")
    try:
        violated = frozenset(
            Property(str(p)) for p in _list(expect.get("violated"), "expect.violated")
        )
    except ValueError:
        raise ScenarioError(
            "expect.violated", "expected P1, P2, P3 or SAFETY"
        ) from None

    w = _mapping(doc.get("weights"), "weights")
    try:
        weights = CostWeights(**{k: float(v) for k, v in w.items()})
    except (TypeError, ValueError) as e:
        raise ScenarioError("weights", str(e)) from None

    outputs = _mapping(doc.get("outputs"), "outputs")
    _reject_unknown(outputs, {"trace", "report", "cost"}, "outputs")

    return ScenarioSpec(
        name=str(doc.get("name", name)),
        config=config,
        zones=tuple(zones),
        programs=programs,
        zone_bodies=bodies,
        attack=attack,
        sync=sync,
        workload=workload,
        mode=mode,
        schedule=actors,
        depth=_int(sched.get("depth", 40), "schedule.depth"),
        runs=_int(sched.get("runs", 1), "schedule.runs"),
        expect_violated=violated,
        weights=weights,
        outputs={k: str(v) for k, v in outputs.items()},
    )


def load_scenario(path: str | Path) -> ScenarioSpec:
    """
    Read and validate the scenario file at *path*.

    Raises:
        rezone.exceptions.ScenarioError:
            If the file isn't valid YAML or a field is invalid.

        OSError: If the file can't be read.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError("<document>", f"invalid YAML: {e}") from None

    return parse_scenario(doc, name=path.stem)


# -- running ---------------------------------------------------------------


def _factory(
    spec: ScenarioSpec, *, booted: bool = True
) -> Callable[[], Simulator]:
    def make() -> Simulator:
        if spec.attack is not None:
            sim = attack_simulator(spec.attack, spec.config, zones=spec.zones)
            if booted:
                for p in attack_program(spec.attack, sim).pre_boot:
                    sim.patch_image(p.image, p.index, p.value)
                sim.boot()
            return sim
        if spec.sync is not None:
            return sync_simulator(
                spec.sync, spec.config.geometry.cores, spec.config
            )
        if spec.workload is not None:
            w = workloads()[spec.workload]
            return Simulator(
                spec.config, w.zones, w.programs, w.zone_bodies, boot=booted
            )
        return Simulator(
            spec.config,
            spec.zones,
            spec.programs,
            spec.zone_bodies,
            boot=booted,
        )

    return make


def _one_run(
    spec: ScenarioSpec, seed: int
) -> tuple[Simulator, AttackOutcome | None, tuple[PropertyVerdict, ...]]:
    make = _factory(spec, booted=spec.attack is None)
    sim = make()
    if spec.attack is not None:
        program = attack_program(spec.attack, sim)
        if spec.mode == "random" and not program.pre_boot:
            sim.boot()
            run_random(sim, seed)
            outcome = run_attack(sim, program, ())
        elif spec.mode == "fixed":
            outcome = run_attack(sim, program, spec.schedule)
        else:
            if not program.pre_boot:
                sim.boot()
                run_fair(sim)
            outcome = run_attack(sim, program, () if sim.booted else None)
        return sim, outcome, outcome.verdicts or verdicts(sim)

    if spec.mode == "random":
        run_random(sim, seed)
    elif spec.mode == "fixed":
        sim.run(spec.schedule)
    if spec.sync is not None:
        v = sync_scenario(sim, spec.sync)
        rest = tuple(
            x for x in verdicts(sim) if x.property is not Property.SAFETY
        )
        return sim, None, (*rest, v)

    run_fair(sim)
    return sim, None, verdicts(sim)


def _merge(
    acc: tuple[PropertyVerdict, ...], new: tuple[PropertyVerdict, ...]
) -> tuple[PropertyVerdict, ...]:
    by = {v.property: v for v in acc}
    for v in new:
        if v.property not in by or (by[v.property].holds and not v.holds):
            by[v.property] = v
    return tuple(by[p] for p in Property if p in by)


def _cost(spec: ScenarioSpec, trace: Trace) -> ComparisonTable:
    if spec.workload is not None:
        return compare(
            tuple(Deployment),
            workloads()[spec.workload],
            spec.weights,
            base=spec.config,
        )
    return ComparisonTable(
        workload=spec.name,
        rows=(
            ComparisonRow(
                config=spec.config.deployment.value,
                breakdown=account(trace, spec.weights),
                ratio=None,
            ),
        ),
    )


def run(spec: ScenarioSpec) -> ScenarioResult:
    """
    Boot, run the scenario as its schedule says, and check every property.

    In ``random`` mode, ``runs`` schedules seeded from the configuration's
    seed are judged; a property fails if it fails on any of them.  In
    ``exhaustive`` mode all interleavings up to ``depth`` steps are
    explored, and the reported trace is the first witness if there is one.
    """
    _log.info("running scenario %r in %s mode", spec.name, spec.mode)

    if spec.mode == "exhaustive":
        try:
            report = explore(
                _factory(spec), spec.depth, scenario=spec.name
            )
        except SecureBootError as e:
            if spec.attack is None:
                raise
            _log.info("secure boot refused the image: %s", e)
            sim = _factory(spec, booted=False)()
            refused = run_attack(sim, attack_program(spec.attack, sim))
            return ScenarioResult(
                spec=spec,
                verdicts=refused.verdicts,
                trace=sim.trace,
                attack=refused,
                cost=_cost(spec, sim.trace),
            )
        witnesses = [v for v in report.verdicts() if not v.holds]
        if witnesses:
            trace = Trace.from_events(witnesses[0].witness)
        else:
            trace = run_fair(_factory(spec)()).trace
        return ScenarioResult(
            spec=spec,
            verdicts=report.verdicts(),
            trace=trace,
            exploration=report,
            cost=_cost(spec, trace),
        )

    runs = spec.runs if spec.mode == "random" else 1
    first: Simulator | None = None
    outcome: AttackOutcome | None = None
    merged: tuple[PropertyVerdict, ...] = ()
    for i in range(runs):
        sim, o, vs = _one_run(spec, spec.config.seed + i)
        if first is None:
            first = sim
        if o is not None and (outcome is None or not o.blocked):
            outcome = o
        merged = _merge(merged, vs)

    trace = first.trace if first is not None else Trace()
    return ScenarioResult(
        spec=spec,
        verdicts=merged,
        trace=trace,
        attack=outcome,
        cost=_cost(spec, trace),
        runs=runs,
    )

