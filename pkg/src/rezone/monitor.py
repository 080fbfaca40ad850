# SPDX-License-Identifier: MIT

"""
The secure monitor and its trampoline: SMC dispatch, zone entry and exit
with maintenance steps A-F, cross-core synchronization, and the scheduler
that interleaves cores with the gatekeeper.

A :class:`Simulator` is a plain value.  :meth:`Simulator.clone` yields an
independent copy, which is what the explorer branches on.

Protocol work is split into *micro-steps*, one per scheduler step, so that
every memory access, message, lock operation, and phase transition is a
point where another actor may run.
"""

from __future__ import annotations

import copy
import logging

from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from ._utils import _check_types, measure
from .cpu import (
    AccessResult,
    CacheGeometry,
    CoreState,
    Fault,
    MappingEntry,
    Soc,
    flush_caches,
    halt_others,
    invalidate_region,
    mem_access,
    resume_others,
    set_coherency,
    tlb_invalidate,
)
from .exceptions import BootOrderViolation, EntryAbort, UnknownZone
from .gatekeeper import (
    DEFAULT_TOKEN_BITS,
    Channel,
    GatekeeperState,
    Mailbox,
    MqMessage,
    MsgKind,
    gk_boot,
    gk_handle,
    secure_boot,
    trusted_manifest,
)
from .ppc import (
    MID_CLUSTER,
    apply_monitor_row,
    apply_zone_row,
    ppc_write_config,
)
from .programs import (
    MU_A_VA,
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
from .topology import (
    EL,
    GATEKEEPER,
    MONITOR,
    MU_A,
    PAGE_SIZE,
    PPC_MMIO,
    REE,
    SHARED,
    TRAMPOLINE,
    Access,
    Kind,
    LayoutConfig,
    MemoryLayout,
    RegionKind,
    World,
    build_layout,
)
from .trace import Trace
from .zones import Route, ZoneManifest, ZoneRegistry, register_zone, route_smc


__all__ = [
    "ENTRY_CHAIN",
    "EXIT_CHAIN",
    "CoreThread",
    "Deployment",
    "DispatchOutcome",
    "Mutations",
    "RzLock",
    "SimConfig",
    "Simulator",
    "WorldSwitchPhase",
    "smc_dispatch",
    "zone_entry",
    "zone_exit",
]

_log = logging.getLogger(__name__)

CANARY_OFFSET = 0x80
RESULT_WORD = 0x1


class Deployment(Enum):
    """
    NORZ is plain TrustZone: a world switch is a context save and restore.
    RZ_NOIRQ defers normal-world interrupts that arrive inside a zone until
    the zone call returns.
    """

    NORZ = "norz"
    RZ = "rz"
    RZ_NOIRQ = "rz-noirq"


class WorldSwitchPhase(Enum):
    IDLE = "IDLE"
    SYNC_HALT = "SYNC_HALT"
    FLUSH = "A"
    TLBI = "B"
    UNLOCK = "C"
    RECONF = "D"
    MMU_OFF = "E"
    IN_ZONE = "IN_ZONE"
    EXIT_INVALIDATE = "F"
    RECONF_BACK = "D'"
    RELOCK = "C'"
    MMU_ON = "E'"
    RESUME = "RESUME"


P = WorldSwitchPhase

ENTRY_CHAIN = (
    P.SYNC_HALT,
    P.FLUSH,
    P.TLBI,
    P.UNLOCK,
    P.RECONF,
    P.MMU_OFF,
    P.IN_ZONE,
)
EXIT_CHAIN = (
    P.EXIT_INVALIDATE,
    P.UNLOCK,
    P.RECONF_BACK,
    P.RELOCK,
    P.MMU_ON,
    P.RESUME,
)

# Trampoline code line fetched by each step.
_CODE_LINE = {
    P.EXIT_INVALIDATE: 0,
    P.SYNC_HALT: 1,
    P.FLUSH: 2,
    P.TLBI: 3,
    P.UNLOCK: 4,
    P.RECONF: 5,
    P.RECONF_BACK: 6,
    P.RELOCK: 7,
    P.RESUME: 8,
}
_WAKE_LINE = 9


class DispatchOutcome(Enum):
    ZONE_ENTRY = "zone"
    MONITOR_SERVICE = "monitor"
    UNKNOWN_SMC = "UnknownSmcId"


@dataclass
class Mutations:
    """
    Protocol steps to leave out.  All ``False`` is the real protocol.
    """

    skip_flush: bool = False
    skip_tlbi: bool = False
    skip_unlock: bool = False
    skip_reconf: bool = False
    skip_mmu_off: bool = False
    skip_invalidate: bool = False
    skip_token_check: bool = False
    skip_coherency_disable: bool = False
    skip_halt: bool = False
    no_wake_into_trampoline: bool = False

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def only(cls, name: str) -> Mutations:
        """
        A mutant with exactly the step *name* disabled.
        """
        if name not in cls.names():
            msg = f"unknown mutation {name!r}"
            raise ValueError(msg)
        return cls(**{name: True})

    @property
    def active(self) -> tuple[str, ...]:
        return tuple(n for n in self.names() if getattr(self, n))


@dataclass
class SimConfig:
    """
    Everything fixed before boot.

    Attributes:
        layout: Region sizes.

        geometry: Cores, caches, and the TLB.

        deployment: Which world-switch flavour runs.

        token_bits: Width of the gatekeeper's token.

        seed: Seeds the token PRNG.

        other_masters: Add a third bus master with its own domain.

        mutations: Protocol steps to leave out.
    """

    layout: LayoutConfig = field(default_factory=LayoutConfig)
    geometry: CacheGeometry = field(default_factory=CacheGeometry)
    deployment: Deployment = Deployment.RZ
    token_bits: int = DEFAULT_TOKEN_BITS
    seed: int = 0
    other_masters: bool = False
    mutations: Mutations = field(default_factory=Mutations)

    def __post_init__(self) -> None:
        e = _check_types(
            layout=(self.layout, LayoutConfig),
            geometry=(self.geometry, CacheGeometry),
            deployment=(self.deployment, Deployment),
            token_bits=(self.token_bits, int),
            seed=(self.seed, int),
            other_masters=(self.other_masters, bool),
            mutations=(self.mutations, Mutations),
        )
        if e:
            raise TypeError(e)
        if self.token_bits < 1:
            msg = "'token_bits' must be positive"
            raise ValueError(msg)


@dataclass
class RzLock:
    """
    The monitor's spin lock.  At most one core holds it.
    """

    holder: int | None = None

    def free_for(self, core: int) -> bool:
        return self.holder is None or self.holder == core


@dataclass(frozen=True)
class Micro:
    """
    One protocol micro-step; *name* selects the handler.
    """

    name: str
    zone: int = 0
    arg: int = 0
    count: int = 0
    payload: Op | None = None


@dataclass
class Frame:
    ops: tuple[Op, ...]
    pc: int = 0
    trusted: bool = True
    zone: int | None = None

    @property
    def pending(self) -> bool:
        return self.pc < len(self.ops) or self.zone is not None


@dataclass
class CoreThread:
    """
    What a core is doing, as opposed to the hardware state in
    :class:`rezone.cpu.CoreState`.

    Attributes:
        frames:
            The running program, with a zone body frame on top while the
            core is inside a zone.

        micro: Pending protocol micro-steps; they run before any op.

        waiting:
            ``"lock"``, ``"reply"`` or ``"mailbox"`` while blocked.

        hung: Set when EL3 code faulted; the core never runs again.

        observed: Every word this core read while in a zone.

        results: Outcomes of SMCs and requests, for reports.
    """

    core: int
    frames: list[Frame]
    micro: list[Micro] = field(default_factory=list)
    phase: WorldSwitchPhase = WorldSwitchPhase.IDLE
    waiting: str | None = None
    sleeping: bool = False
    hung: bool = False
    done: bool = False
    return_world: World = World.NORMAL
    pending_irqs: int = 0
    entry_aborted: bool = False
    observed: list[int] = field(default_factory=list)
    results: list[str] = field(default_factory=list)

    @property
    def trusted(self) -> bool:
        return self.frames[-1].trusted if self.frames else True

    @property
    def zone_frame(self) -> Frame | None:
        if self.frames and self.frames[-1].zone is not None:
            return self.frames[-1]
        return None

    @property
    def current_zone(self) -> int | None:
        return self.frames[-1].zone if self.frames else None

    def has_work(self) -> bool:
        return (
            bool(self.micro)
            or self.sleeping
            or any(f.pending for f in self.frames)
        )

    def fingerprint(self) -> tuple[object, ...]:
        return (
            tuple((f.pc, f.zone) for f in self.frames),
            tuple(self.micro),
            self.phase,
            self.waiting,
            self.sleeping,
            self.hung,
            self.done,
            self.return_world,
            self.pending_irqs,
            tuple(self.observed),
            tuple(self.results),
        )


def trampoline_image(words: int) -> tuple[int, ...]:
    """
    The trampoline's code, one word per cache line.
    """
    return tuple(0xD400_0000_0000_0000 | i for i in range(words))


def gatekeeper_image() -> tuple[int, ...]:
    return tuple(0xACE0_0000_0000_0000 | i for i in range(64))


def canary(kind: RegionKind) -> int:
    """
    The secret word planted in *kind*'s region.
    """
    tag = list(Kind).index(kind.tag)
    return 0x5EC2_E700_0000_0000 | (tag << 16) | kind.index


class Simulator:
    """
    One booted system plus its programs.

    Args:
        config: Fixed parameters.

        zones: Zone manifests, registered in order.

        programs: Per-core programs; cores without one start idle.

        zone_bodies: What each zone runs when it's entered.

        boot: Run secure boot and the gatekeeper right away.

    Raises:
        rezone.exceptions.ZoneError: If a manifest is rejected.

        rezone.exceptions.LayoutError: If the regions don't fit.
    """

    def __init__(
        self,
        config: SimConfig,
        zones: Sequence[ZoneManifest],
        programs: Mapping[int, Program] | None = None,
        zone_bodies: Mapping[int, Program] | None = None,
        *,
        boot: bool = True,
    ) -> None:
        self.config = config
        registry = ZoneRegistry(peripherals=config.layout.peripherals)
        for m in zones:
            registry = register_zone(registry, m)
        self.registry = registry
        self.layout: MemoryLayout = build_layout(
            registry.manifests, config.layout
        )
        self.trace = Trace()
        self.soc = Soc(self.layout, config.geometry, self.trace)

        lines = self.layout[TRAMPOLINE].length // config.geometry.line_size
        self.pristine = trampoline_image(lines)
        self.images: dict[str, tuple[int, ...]] = {
            "trampoline": self.pristine,
            "gatekeeper": gatekeeper_image(),
        }
        self.manifest = trusted_manifest(self.images)

        self.gk = GatekeeperState()
        self.mailbox = Mailbox()
        self.rz_lock = RzLock()
        self.parked: tuple[int, ...] = ()
        self.zone_bodies = dict(zone_bodies or {})
        self.zone_ctx: dict[int, tuple[MappingEntry, ...]] = {
            m.zone_id: self._zone_mappings(m) for m in registry.manifests
        }

        programs = programs or {}
        self.starts = {
            c: programs[c].start if c in programs else Start.NORMAL
            for c in range(config.geometry.cores)
        }
        self.threads = [
            CoreThread(
                core=c,
                frames=[
                    Frame(
                        ops=programs[c].ops if c in programs else (),
                        trusted=programs[c].trusted if c in programs else True,
                    )
                ],
            )
            for c in range(config.geometry.cores)
        ]
        self.untrusted_started = False
        self.booted = False
        self.steps = 0
        self.schedule: list[str] = []

        if boot:
            self.boot()

    # -- setup ------------------------------------------------------------

    def _zone_mappings(self, m: ZoneManifest) -> tuple[MappingEntry, ...]:
        zone = self.layout[RegionKind.zone(m.zone_id)]
        pages = [
            MappingEntry(ZONE_VA_BASE + off, zone.start + off, 0)
            for off in range(0, zone.length, PAGE_SIZE)
        ]
        return (
            *pages,
            MappingEntry(SHARED_VA, self.layout[SHARED].start, 1),
            MappingEntry(
                TRAMPOLINE_VA, self.layout[TRAMPOLINE].start, 0, writable=False
            ),
            MappingEntry(MU_A_VA, self.layout[MU_A].start, 0),
        )

    def addr(self, kind: RegionKind, offset: int = 0) -> int:
        """
        Physical address *offset* bytes into *kind*'s region.
        """
        return self.layout[kind].start + offset

    def canary_addr(self, kind: RegionKind) -> int:
        return self.addr(kind, CANARY_OFFSET)

    @property
    def canaries(self) -> dict[RegionKind, int]:
        kinds = [REE, MONITOR, GATEKEEPER] + [
            RegionKind.zone(z) for z in self.layout.zone_ids
        ]
        return {k: canary(k) for k in kinds}

    def patch_image(self, image: str, index: int, value: int) -> None:
        """
        Tamper with a firmware image before boot.
        """
        if self.booted:
            msg = "images can only be patched before boot"
            raise BootOrderViolation(msg)
        words = list(self.images[image])
        words[index] = value
        self.images[image] = tuple(words)

    def boot(self) -> None:
        """
        Secure boot, partition controller, gatekeeper, and core placement.

        Raises:
            rezone.exceptions.SecureBootError: If an image was tampered with.

            rezone.exceptions.BootOrderViolation:
                If untrusted code already ran.
        """
        if self.booted:
            msg = "the system boots once"
            raise BootOrderViolation(msg)

        secure_boot(self.images, self.manifest, self.trace)

        tramp = self.layout[TRAMPOLINE].start
        for i, word in enumerate(self.images["trampoline"]):
            self.soc.store(tramp + i * self.config.geometry.line_size, word)
        # EL3 translation table, walked on TLB misses.
        self.soc.store(self.soc.page_table_addr, 0x3 | self.addr(MONITOR))
        for kind, word in self.canaries.items():
            self.soc.store(self.canary_addr(kind), word)

        self.gk, _ = gk_boot(
            self.soc,
            self.config.seed,
            token_bits=self.config.token_bits,
            check_token=not self.config.mutations.skip_token_check,
            untrusted_started=self.untrusted_started,
            other_masters=self.config.other_masters,
        )

        for t in self.threads:
            core = self.soc.cluster.cores[t.core]
            start = self.starts[t.core]
            if start is Start.NORMAL:
                core.el, core.world = EL.EL1, World.NORMAL
            else:
                core.el, core.world = EL.EL3, World.SECURE
                t.return_world = World.SECURE
            t.sleeping = start is Start.SLEEPING
            t.done = not t.has_work()

        self.booted = True
        _log.debug(
            "booted %d cores, %d zones",
            len(self.threads),
            len(self.registry.zones),
        )

    # -- scheduling -------------------------------------------------------

    def _enabled(self, t: CoreThread) -> bool:
        if t.done or t.hung or self.soc.cluster.cores[t.core].halted:
            return False
        if t.waiting == "lock":
            return self.rz_lock.free_for(t.core)
        if t.waiting == "reply":
            return (
                self.mailbox.reply is not None
                and self.mailbox.sender == t.core
            )
        if t.waiting == "mailbox":
            return not self.mailbox.busy

        return True

    def enabled_actors(self) -> list[str]:
        """
        Actors that can take a step now, in a fixed order.
        """
        if not self.booted:
            return []
        actors = [f"c{t.core}" for t in self.threads if self._enabled(t)]
        if self.mailbox.request is not None:
            actors.append("gk")

        return actors

    @property
    def finished(self) -> bool:
        return all(t.done for t in self.threads)

    @property
    def deadlocked(self) -> bool:
        return not self.enabled_actors() and not self.finished

    def step(self, actor: str) -> None:
        """
        Let *actor* take one step.

        Raises:
            ValueError: If *actor* isn't enabled.
        """
        if actor not in self.enabled_actors():
            msg = f"actor {actor!r} isn't enabled"
            raise ValueError(msg)
        self.schedule.append(actor)
        self.steps += 1

        if actor == "gk":
            self._gk_step()
            return

        t = self.threads[int(actor[1:])]
        core = self.soc.cluster.cores[t.core]
        if not self.untrusted_started and (
            core.world is World.NORMAL or core.el is not EL.EL3
        ):
            self.untrusted_started = True
            self.registry = self.registry.freeze()

        self.trace.actor = actor
        self.trace.phase = t.phase.value
        self._advance(t)

        if not t.hung and not t.has_work() and not t.done:
            t.done = True
            self.trace.emit("DONE", core=t.core)

    def run(
        self, schedule: Iterable[str] | None = None, max_steps: int = 100_000
    ) -> Simulator:
        """
        Replay *schedule*, or always pick the first enabled actor until
        nothing is enabled.
        """
        if schedule is not None:
            for actor in schedule:
                self.step(actor)
            return self

        for _ in range(max_steps):
            enabled = self.enabled_actors()
            if not enabled:
                break
            self.step(enabled[0])

        return self

    def clone(self) -> Simulator:
        """
        An independent copy.  Immutable parts are shared, and trace events
        are copied by reference.
        """
        trace = Trace.from_events(self.trace)
        trace.actor, trace.phase = self.trace.actor, self.trace.phase
        memo: dict[int, object] = {id(self.trace): trace}
        shared: list[object] = [
            self.config,
            self.layout,
            self.registry,
            self.images,
            self.manifest,
            self.pristine,
            self.zone_bodies,
        ]
        shared += [f.ops for t in self.threads for f in t.frames]
        for o in shared:
            memo[id(o)] = o
        return copy.deepcopy(self, memo)

    def fingerprint(self) -> tuple[object, ...]:
        """
        Everything that determines future behaviour; the trace is excluded.
        """
        return (
            self.soc.fingerprint(),
            self.gk.auth_failures,
            self.mailbox,
            self.rz_lock.holder,
            self.parked,
            tuple(t.fingerprint() for t in self.threads),
            tuple(sorted(self.zone_ctx.items())),
            self.registry.last_zone,
        )

    # -- helpers ----------------------------------------------------------

    def _core(self, t: CoreThread) -> CoreState:
        return self.soc.cluster.cores[t.core]

    def _phase(self, t: CoreThread, phase: WorldSwitchPhase) -> None:
        t.phase = phase
        self.trace.phase = phase.value
        self.trace.emit("PHASE", core=t.core, phase=phase.value)
        _log.debug("core %d: %s", t.core, phase.value)

    def _fault(self, t: CoreThread, fault: Fault, *, honest: bool) -> None:
        self.trace.emit(
            "FAULT",
            core=t.core,
            fault=fault.kind.value,
            detail=fault.detail,
            honest=honest,
        )
        if honest:
            _log.warning(
                "core %d faulted: %s %s", t.core, fault.kind.value, fault.detail
            )

    def _hang(self, t: CoreThread, fault: Fault) -> None:
        self._fault(t, fault, honest=True)
        t.hung = True
        _log.warning("core %d hangs at EL3", t.core)

    def _in_zone_ctx(self, t: CoreThread) -> bool:
        core = self._core(t)
        return core.world is World.SECURE and core.el is not EL.EL3

    def _access(
        self,
        t: CoreThread,
        addr: int,
        access: Access,
        value: int = 0,
        *,
        fetch: bool = False,
        via_mmu: bool = True,
    ) -> AccessResult:
        res = mem_access(
            self.soc, t.core, addr, access, via_mmu, value, fetch=fetch
        )
        if res.fault is not None:
            self._fault(t, res.fault, honest=t.trusted)
        elif (
            access is Access.READ
            and res.value is not None
            and self._in_zone_ctx(t)
        ):
            t.observed.append(res.value)

        return res

    def _fetch(self, t: CoreThread, line: int) -> bool:
        """
        Fetch trampoline code line *line* at EL3.  A fault hangs the core.
        """
        pa = self.addr(TRAMPOLINE, line * self.config.geometry.line_size)
        res = mem_access(self.soc, t.core, pa, Access.READ, fetch=True)
        if res.fault is not None:
            self._hang(t, res.fault)
            return False
        self.trace.emit(
            "EL3_EXEC",
            core=t.core,
            pa=pa,
            tainted=res.value != self.pristine[line],
        )

        return True

    def _ctx(self, t: CoreThread, op: str, context: str) -> None:
        self.trace.emit("CTX", core=t.core, op=op, context=context)

    def _to_el3(self, t: CoreThread) -> None:
        core = self._core(t)
        core.el, core.world = EL.EL3, World.SECURE

    def _return(self, t: CoreThread) -> None:
        core = self._core(t)
        if t.return_world is World.NORMAL:
            self._ctx(t, "restore", "normal")
            core.el, core.world = EL.EL1, World.NORMAL
        else:
            core.el, core.world = EL.EL3, World.SECURE

    def _send(self, t: CoreThread, kind: MsgKind) -> bool:
        core = self._core(t)
        token = core.read_token_reg()
        if isinstance(token, Fault):
            self._hang(t, token)
            return False
        res = mem_access(
            self.soc, t.core, self.addr(MU_A), Access.WRITE, value=token
        )
        if res.fault is not None:
            self._hang(t, res.fault)
            return False
        self.mailbox = self.mailbox.post(
            MqMessage(Channel.A_TO_B, kind, token), t.core
        )
        self.trace.emit(
            "MQ_SEND",
            channel=Channel.A_TO_B.value,
            message=kind.value,
            sender=t.core,
        )
        t.waiting = "reply"

        return True

    def _collect(self, t: CoreThread) -> MqMessage:
        reply, self.mailbox = self.mailbox.collect()
        t.waiting = None
        if reply is None:
            msg = f"core {t.core} collected an empty mailbox"
            raise RuntimeError(msg)

        return reply

    def _entry_chain(self, zone: int) -> list[Micro]:
        if self.config.deployment is Deployment.NORZ:
            return [Micro("norz_enter", zone)]
        names = (
            "sync_halt",
            "flush",
            "tlbi",
            "unlock_send",
            "unlock_recv",
            "reconf",
            "lock_send",
            "lock_recv",
            "mmu_off",
            "in_zone",
        )
        return [Micro(n, zone) for n in names]

    def _exit_chain(self, zone: int, *, keep_frame: bool = False) -> list[Micro]:
        arg = 1 if keep_frame else 0
        if self.config.deployment is Deployment.NORZ:
            return [Micro("norz_exit", zone, arg)]
        names = (
            "exit_f",
            "exit_unlock_send",
            "exit_unlock_recv",
            "reconf_back",
            "relock_send",
            "relock_recv",
            "mmu_on",
            "resume",
        )
        return [Micro(n, zone, arg) for n in names]

    def begin_entry(self, core_id: int, zone_id: int) -> None:
        if zone_id not in self.registry.zones:
            msg = f"zone {zone_id} isn't registered"
            raise UnknownZone(msg)
        self.threads[core_id].micro[:0] = self._entry_chain(zone_id)

    def begin_exit(self, core_id: int) -> None:
        t = self.threads[core_id]
        zone = t.current_zone
        if zone is None:
            msg = f"core {core_id} isn't inside a zone"
            raise ValueError(msg)
        t.micro[:0] = self._exit_chain(zone)

    # -- stepping ---------------------------------------------------------

    def _advance(self, t: CoreThread) -> None:
        if t.sleeping:
            self._wake(t)
            return
        if t.micro:
            m = t.micro[0]
            getattr(self, "_" + m.name)(t, m)
            return

        frame = t.frames[-1]
        if frame.pc >= len(frame.ops):
            if frame.zone is not None:
                self.begin_exit(t.core)
                self._advance(t)
            else:
                t.frames.pop()
            return

        op = frame.ops[frame.pc]
        frame.pc += 1
        self._exec(t, op)

    def _exec(self, t: CoreThread, op: Op) -> None:  # noqa: C901
        core = self._core(t)
        if isinstance(op, Read):
            self._access(t, op.addr, Access.READ, via_mmu=op.via_mmu)
        elif isinstance(op, Write):
            self._access(
                t, op.addr, Access.WRITE, op.value, via_mmu=op.via_mmu
            )
        elif isinstance(op, Fetch):
            self._access(t, op.addr, Access.READ, fetch=True)
        elif isinstance(op, Smc):
            if self._in_zone_ctx(t) and t.zone_frame is not None:
                self.trace.emit("SMC", core=t.core, id=op.smc_id, route="exit")
                t.zone_frame.pc = len(t.zone_frame.ops)
                self.begin_exit(t.core)
            else:
                smc_dispatch(self, t.core, op.smc_id)
        elif isinstance(op, Sleep):
            t.sleeping = True
        elif isinstance(op, MonitorWork):
            self._access(t, self.addr(MONITOR, op.offset), Access.READ)
        elif isinstance(op, EnterZone):
            t.return_world = World.SECURE
            self.begin_entry(t.core, op.zone_id)
        elif isinstance(op, Map):
            if self._in_zone_ctx(t):
                core.s1_mappings.append(
                    MappingEntry(op.va, op.pa, op.ns, op.writable)
                )
        elif isinstance(op, SendMq):
            t.micro.insert(0, Micro("mq_send", arg=op.token_claim, payload=op))
        elif isinstance(op, GuessToken):
            if op.attempts > 0:
                t.micro.insert(
                    0,
                    Micro(
                        "mq_send",
                        arg=op.start,
                        count=op.attempts,
                        payload=op,
                    ),
                )
        elif isinstance(op, ReadTokenReg):
            value = core.read_token_reg()
            if isinstance(value, Fault):
                self.trace.emit("TOKEN_TRAP", core=t.core, el=int(core.el))
                self._fault(t, value, honest=t.trusted)
            elif self._in_zone_ctx(t):
                t.observed.append(value)
        elif isinstance(op, PpcWrite):
            res = self._access(t, op.va, Access.WRITE)
            if res.ok and res.region == PPC_MMIO:
                self.soc.ppc = ppc_write_config(
                    self.soc.ppc, MID_CLUSTER, op.edit, self.trace
                )
        elif isinstance(op, Irq):
            self._irq(t)
        elif isinstance(op, Work):
            self.trace.emit("WORK", core=t.core, units=op.units)
        elif isinstance(op, PreBootPatch):
            _log.info("core %d: pre-boot patch after boot ignored", t.core)

    def _irq(self, t: CoreThread) -> None:
        zone = t.current_zone
        if zone is None:
            self.trace.emit("IRQ", core=t.core, handling="normal")
            return

        dep = self.config.deployment
        if dep is Deployment.NORZ:
            self.trace.emit("IRQ", core=t.core, handling="preempt")
            self._ctx(t, "save", f"zone{zone}")
            self._ctx(t, "restore", f"zone{zone}")
        elif dep is Deployment.RZ_NOIRQ:
            self.trace.emit("IRQ", core=t.core, handling="deferred")
            t.pending_irqs += 1
        else:
            t.micro[:0] = [
                *self._exit_chain(zone, keep_frame=True),
                Micro("irq_handle"),
                *self._entry_chain(zone),
            ]

    def _irq_handle(self, t: CoreThread, m: Micro) -> None:
        self.trace.emit("IRQ", core=t.core, handling="exit")
        t.micro.pop(0)

    def _gk_step(self) -> None:
        req = self.mailbox.request
        if req is None:
            msg = "the gatekeeper has nothing to answer"
            raise RuntimeError(msg)
        sender = self.mailbox.sender
        self.trace.actor = "gk"
        self.trace.phase = (
            self.threads[sender].phase.value if sender is not None else "IDLE"
        )
        self.gk, reply, self.soc.ppc = gk_handle(
            self.gk, req, self.soc.ppc, self.trace
        )
        self.mailbox = self.mailbox.answer(reply)

    def _wake(self, t: CoreThread) -> None:
        t.sleeping = False
        core = self._core(t)
        core.el, core.world = EL.EL3, World.SECURE
        if self.config.mutations.no_wake_into_trampoline:
            pa = self.addr(MONITOR, 0x40)
        else:
            pa = self.addr(
                TRAMPOLINE, _WAKE_LINE * self.config.geometry.line_size
            )
        self.trace.emit("WAKE", core=t.core, vector=pa)
        res = mem_access(self.soc, t.core, pa, Access.READ, fetch=True)
        if res.fault is not None:
            self._hang(t, res.fault)
            return
        t.micro.insert(0, Micro("lock_wait"))

    def _lock_wait(self, t: CoreThread, m: Micro) -> None:
        if not self.rz_lock.free_for(t.core):
            t.waiting = "lock"
            return
        t.waiting = None
        t.micro.pop(0)

    def _mq_send(self, t: CoreThread, m: Micro) -> None:
        if self.mailbox.busy:
            t.waiting = "mailbox"
            return
        t.waiting = None
        t.micro.pop(0)
        op = m.payload
        if isinstance(op, SendMq):
            kind, va = op.kind, op.va
        else:
            kind, va = MsgKind.UNLOCK_PPC, MU_A_VA
        res = self._access(t, va, Access.WRITE, m.arg)
        if not res.ok or res.region != MU_A:
            return
        self.mailbox = self.mailbox.post(
            MqMessage(Channel.A_TO_B, kind, m.arg), t.core
        )
        self.trace.emit(
            "MQ_SEND",
            channel=Channel.A_TO_B.value,
            message=kind.value,
            sender=t.core,
        )
        t.waiting = "reply"
        t.micro.insert(0, replace(m, name="mq_recv"))

    def _mq_recv(self, t: CoreThread, m: Micro) -> None:
        reply = self._collect(t)
        t.micro.pop(0)
        t.results.append(reply.kind.value)
        if (
            isinstance(m.payload, GuessToken)
            and reply.kind is MsgKind.NACK
            and m.count > 1
        ):
            t.micro.insert(
                0,
                replace(m, name="mq_send", arg=m.arg + 1, count=m.count - 1),
            )

    # -- zone entry -------------------------------------------------------

    def _sync_halt(self, t: CoreThread, m: Micro) -> None:
        if not self.rz_lock.free_for(t.core):
            t.waiting = "lock"
            return
        t.waiting = None
        self.rz_lock.holder = t.core
        self.trace.emit("LOCK", holder=t.core)
        self._phase(t, P.SYNC_HALT)
        if self._core(t).world is World.NORMAL:
            self._ctx(t, "save", "normal")
        self._to_el3(t)
        if not self._fetch(t, _CODE_LINE[P.SYNC_HALT]):
            return
        if not self.config.mutations.skip_halt:
            asleep = frozenset(x.core for x in self.threads if x.sleeping)
            self.parked = tuple(
                halt_others(self.soc, t.core, spare=asleep)
            )
            for dst in self.parked:
                self.trace.emit("IPI", src=t.core, dst=dst)
        t.micro.pop(0)

    def _flush(self, t: CoreThread, m: Micro) -> None:
        if not self.config.mutations.skip_flush:
            self._phase(t, P.FLUSH)
            if not self._fetch(t, _CODE_LINE[P.FLUSH]):
                return
            flush_caches(self.soc, t.core)
        t.micro.pop(0)

    def _tlbi(self, t: CoreThread, m: Micro) -> None:
        if (
            self.soc.cluster.last_zone != m.zone
            and not self.config.mutations.skip_tlbi
        ):
            self._phase(t, P.TLBI)
            if not self._fetch(t, _CODE_LINE[P.TLBI]):
                return
            tlb_invalidate(self.soc)
        t.micro.pop(0)

    def _unlock_send(self, t: CoreThread, m: Micro) -> None:
        if self.config.mutations.skip_unlock:
            del t.micro[:2]
            return
        self._phase(t, P.UNLOCK)
        if not self._fetch(t, _CODE_LINE[P.UNLOCK]):
            return
        if self._send(t, MsgKind.UNLOCK_PPC):
            t.micro.pop(0)

    def _unlock_recv(self, t: CoreThread, m: Micro) -> None:
        reply = self._collect(t)
        t.micro.pop(0)
        if reply.kind is MsgKind.NACK:
            self._abort(t, m.zone)

    def _abort(self, t: CoreThread, zone: int) -> None:
        """
        Fail closed: stay in the monitor row and give the cluster back.
        """
        self.trace.emit("ENTRY_ABORT", core=t.core, zone=zone)
        _log.warning("core %d: entry to zone %d refused", t.core, zone)
        self.soc.ppc = apply_monitor_row(
            self.soc.ppc, self.layout, trace=self.trace
        )
        resume_others(self.soc, list(self.parked))
        self.parked = ()
        self.rz_lock.holder = None
        self.trace.emit("LOCK", holder=None)
        t.micro.clear()
        if t.zone_frame is not None:
            t.frames.pop()
        self._return(t)
        t.phase = P.IDLE
        t.entry_aborted = True
        t.results.append("EntryAbort")

    def _reconf(self, t: CoreThread, m: Micro) -> None:
        if not self.config.mutations.skip_reconf:
            self._phase(t, P.RECONF)
            if not self._fetch(t, _CODE_LINE[P.RECONF]):
                return
            self.soc.ppc = apply_zone_row(
                self.soc.ppc,
                self.registry[m.zone],
                self.layout,
                trace=self.trace,
            )
        t.micro.pop(0)

    def _lock_send(self, t: CoreThread, m: Micro) -> None:
        if self._send(t, MsgKind.LOCK_PPC):
            t.micro.pop(0)

    def _lock_recv(self, t: CoreThread, m: Micro) -> None:
        self._collect(t)
        t.micro.pop(0)

    def _mmu_off(self, t: CoreThread, m: Micro) -> None:
        mut = self.config.mutations
        self._phase(t, P.MMU_OFF)
        if not mut.skip_coherency_disable:
            set_coherency(self.soc, False)
        if not mut.skip_mmu_off:
            for core in self.soc.cluster.cores:
                core.el3_mmu_on = False
            self.trace.emit("MMU", on=False)

        core = self._core(t)
        core.s1_mappings = list(self.zone_ctx[m.zone])
        self._ctx(t, "restore", f"zone{m.zone}")
        self.soc.active_zone = m.zone
        self.soc.cluster.last_zone = m.zone
        self.registry = self.registry.entered(m.zone)
        core.el, core.world = EL.EL1, World.SECURE
        t.micro.pop(0)

    def _push_body(self, t: CoreThread, zone: int) -> None:
        frame = t.zone_frame
        if frame is not None and frame.zone == zone:
            return
        body = self.zone_bodies.get(zone, Program())
        t.frames.append(Frame(ops=body.ops, trusted=body.trusted, zone=zone))

    def _in_zone(self, t: CoreThread, m: Micro) -> None:
        self._phase(t, P.IN_ZONE)
        self._push_body(t, m.zone)
        t.micro.pop(0)

    # -- zone exit --------------------------------------------------------

    def _exit_f(self, t: CoreThread, m: Micro) -> None:
        core = self._core(t)
        self._phase(t, P.EXIT_INVALIDATE)
        if core.el is not EL.EL3:
            self.zone_ctx[m.zone] = tuple(core.s1_mappings)
            self._ctx(t, "save", f"zone{m.zone}")
            self._to_el3(t)
        if not self._fetch(t, _CODE_LINE[P.EXIT_INVALIDATE]):
            return
        if not self.config.mutations.skip_invalidate:
            invalidate_region(self.soc, TRAMPOLINE)
        tramp = self.layout[TRAMPOLINE].start
        step = self.config.geometry.line_size
        in_memory = [
            self.soc.load(tramp + i * step) for i in range(len(self.pristine))
        ]
        if measure(in_memory) != self.manifest["trampoline"]:
            self.trace.emit("EL3_EXEC", core=t.core, pa=tramp, tainted=True)
        t.micro.pop(0)

    def _exit_unlock_send(self, t: CoreThread, m: Micro) -> None:
        if self.config.mutations.skip_unlock:
            del t.micro[:2]
            return
        self._phase(t, P.UNLOCK)
        if not self._fetch(t, _CODE_LINE[P.UNLOCK]):
            return
        if self._send(t, MsgKind.UNLOCK_PPC):
            t.micro.pop(0)

    def _exit_unlock_recv(self, t: CoreThread, m: Micro) -> None:
        if self._collect(t).kind is MsgKind.NACK:
            _log.warning("core %d: exit unlock refused", t.core)
        t.micro.pop(0)

    def _reconf_back(self, t: CoreThread, m: Micro) -> None:
        if not self.config.mutations.skip_reconf:
            self._phase(t, P.RECONF_BACK)
            if not self._fetch(t, _CODE_LINE[P.RECONF_BACK]):
                return
            self.soc.ppc = apply_monitor_row(
                self.soc.ppc, self.layout, trace=self.trace
            )
        t.micro.pop(0)

    def _relock_send(self, t: CoreThread, m: Micro) -> None:
        self._phase(t, P.RELOCK)
        if not self._fetch(t, _CODE_LINE[P.RELOCK]):
            return
        if self._send(t, MsgKind.LOCK_PPC):
            t.micro.pop(0)

    def _relock_recv(self, t: CoreThread, m: Micro) -> None:
        self._collect(t)
        t.micro.pop(0)

    def _mmu_on(self, t: CoreThread, m: Micro) -> None:
        self._phase(t, P.MMU_ON)
        for core in self.soc.cluster.cores:
            core.el3_mmu_on = True
        self.trace.emit("MMU", on=True)
        set_coherency(self.soc, True)
        self.soc.active_zone = None
        t.micro.pop(0)

    def _resume(self, t: CoreThread, m: Micro) -> None:
        self._phase(t, P.RESUME)
        if not self._fetch(t, _CODE_LINE[P.RESUME]):
            return
        res = mem_access(
            self.soc, t.core, self.addr(SHARED), Access.WRITE, value=RESULT_WORD
        )
        if res.fault is not None:
            self._hang(t, res.fault)
            return
        resume_others(self.soc, list(self.parked))
        self.parked = ()
        self.rz_lock.holder = None
        self.trace.emit("LOCK", holder=None)
        if not m.arg and t.zone_frame is not None:
            t.frames.pop()
        self._return(t)
        self._drain_irqs(t)
        t.phase = P.IDLE
        t.micro.pop(0)
        if not m.arg:
            t.results.append("ok")

    def _drain_irqs(self, t: CoreThread) -> None:
        for _ in range(t.pending_irqs):
            self.trace.emit("IRQ", core=t.core, handling="normal")
        t.pending_irqs = 0

    # -- plain TrustZone --------------------------------------------------

    def _norz_enter(self, t: CoreThread, m: Micro) -> None:
        core = self._core(t)
        if core.world is World.NORMAL:
            self._ctx(t, "save", "normal")
        core.s1_mappings = list(self.zone_ctx[m.zone])
        self._ctx(t, "restore", f"zone{m.zone}")
        core.el, core.world = EL.EL1, World.SECURE
        self._phase(t, P.IN_ZONE)
        self._push_body(t, m.zone)
        t.micro.pop(0)

    def _norz_exit(self, t: CoreThread, m: Micro) -> None:
        core = self._core(t)
        self.zone_ctx[m.zone] = tuple(core.s1_mappings)
        self._ctx(t, "save", f"zone{m.zone}")
        if not m.arg and t.zone_frame is not None:
            t.frames.pop()
        self._return(t)
        self._drain_irqs(t)
        t.phase = P.IDLE
        t.micro.pop(0)
        if not m.arg:
            t.results.append("ok")


def smc_dispatch(sim: Simulator, core_id: int, smc_id: int) -> DispatchOutcome:
    """
    Route an SMC issued by *core_id*.

    Zone ids start :func:`zone_entry`'s chain on that core; monitor
    services are answered at EL3 directly; unknown ids are reported back to
    the caller.
    """
    t = sim.threads[core_id]
    route = route_smc(sim.registry, smc_id)
    if route is Route.MONITOR_SERVICE:
        sim.trace.emit("SMC", core=core_id, id=smc_id, route="monitor")
        t.results.append(DispatchOutcome.MONITOR_SERVICE.value)
        return DispatchOutcome.MONITOR_SERVICE
    if route is Route.UNKNOWN:
        sim.trace.emit("SMC", core=core_id, id=smc_id, route="unknown")
        t.results.append(DispatchOutcome.UNKNOWN_SMC.value)
        _log.info("core %d: unknown SMC id %d", core_id, smc_id)
        return DispatchOutcome.UNKNOWN_SMC

    sim.trace.emit("SMC", core=core_id, id=smc_id, route=f"zone{route}")
    t.return_world = sim.soc.cluster.cores[core_id].world
    sim.begin_entry(core_id, route)

    return DispatchOutcome.ZONE_ENTRY


def _drive(sim: Simulator, core_id: int) -> None:
    t = sim.threads[core_id]
    actor = f"c{core_id}"
    while t.micro and not t.hung:
        enabled = sim.enabled_actors()
        if actor in enabled:
            sim.step(actor)
        elif "gk" in enabled:
            sim.step("gk")
        else:
            break


def zone_entry(sim: Simulator, core_id: int, zone_id: int) -> None:
    """
    Run the whole entry chain for *zone_id* on *core_id*, answering the
    gatekeeper's side as needed.

    Raises:
        rezone.exceptions.EntryAbort: If the gatekeeper refused to unlock.

        ValueError: If the core isn't at EL3.
    """
    core = sim.soc.cluster.cores[core_id]
    if core.el is not EL.EL3:
        msg = f"core {core_id} must be at EL3 to enter a zone"
        raise ValueError(msg)
    t = sim.threads[core_id]
    t.done = False
    t.return_world = World.SECURE
    t.entry_aborted = False
    sim.begin_entry(core_id, zone_id)
    _drive(sim, core_id)
    if t.entry_aborted:
        msg = f"the gatekeeper refused entry to zone {zone_id}"
        raise EntryAbort(msg)


def zone_exit(sim: Simulator, core_id: int) -> None:
    """
    Run the whole exit chain for the zone *core_id* is in.
    """
    if sim.soc.active_zone is None and (
        sim.config.deployment is not Deployment.NORZ
    ):
        msg = "no zone is active"
        raise ValueError(msg)
    sim.begin_exit(core_id)
    _drive(sim, core_id)
