# SPDX-License-Identifier: MIT

"""
The instruction alphabet of simulated programs.

Normal-world code, monitor code, honest zone bodies, and attacker zone
bodies are all tuples of these ops.  Each op is one scheduler step; the
protocol work an op triggers (a zone entry, say) is split into further
steps by :mod:`rezone.monitor`.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

from .gatekeeper import MsgKind
from .ppc import ConfigEdit


__all__ = [
    "MU_A_VA",
    "PPC_VA",
    "SHARED_VA",
    "TRAMPOLINE_VA",
    "ZONE_VA_BASE",
    "EnterZone",
    "Fetch",
    "GuessToken",
    "Irq",
    "Map",
    "MonitorWork",
    "Op",
    "PpcWrite",
    "PreBootPatch",
    "Program",
    "Read",
    "ReadTokenReg",
    "SendMq",
    "Sleep",
    "Smc",
    "Start",
    "Work",
    "Write",
]

# Every zone sees its world through the same virtual addresses.
ZONE_VA_BASE = 0x4000_0000
SHARED_VA = 0x5000_0000
TRAMPOLINE_VA = 0x6000_0000
MU_A_VA = 0x7000_0000
PPC_VA = 0x7100_0000


class Start(Enum):
    """
    Where a core is when the simulation starts.
    """

    NORMAL = "normal"
    EL3 = "el3"
    SLEEPING = "sleeping"


@dataclass(frozen=True)
class Read:
    addr: int
    via_mmu: bool = True


@dataclass(frozen=True)
class Write:
    addr: int
    value: int
    via_mmu: bool = True


@dataclass(frozen=True)
class Fetch:
    addr: int


@dataclass(frozen=True)
class Smc:
    """
    Issue an SMC.  From a zone, any SMC returns to the caller.
    """

    smc_id: int


@dataclass(frozen=True)
class Sleep:
    """
    Power the core down until an arbitrary later step wakes it.
    """


@dataclass(frozen=True)
class MonitorWork:
    """
    EL3 bookkeeping: a load from the monitor's private memory.
    """

    offset: int = 0x100


@dataclass(frozen=True)
class EnterZone:
    """
    Enter a zone directly from EL3.
    """

    zone_id: int


@dataclass(frozen=True)
class Map:
    """
    Install a stage-1 mapping.  Only a trusted OS can; elsewhere it's a
    no-op.
    """

    va: int
    pa: int
    ns: int = 0
    writable: bool = True


@dataclass(frozen=True)
class SendMq:
    """
    Post a request to the gatekeeper by writing the message unit, then
    wait for the answer.
    """

    kind: MsgKind
    token_claim: int = 0
    va: int = MU_A_VA


@dataclass(frozen=True)
class GuessToken:
    """
    Send unlock requests with claims *start*, *start* + 1, ... until one is
    acknowledged or *attempts* ran out.
    """

    attempts: int
    start: int = 0


@dataclass(frozen=True)
class ReadTokenReg:
    pass


@dataclass(frozen=True)
class PpcWrite:
    """
    Write one partition controller register through the mapping at *va*.
    """

    va: int
    edit: ConfigEdit


@dataclass(frozen=True)
class Irq:
    """
    A normal-world interrupt arriving now.
    """


@dataclass(frozen=True)
class Work:
    """
    *units* of computation that touch no memory.
    """

    units: int = 1


@dataclass(frozen=True)
class PreBootPatch:
    """
    Overwrite word *index* of firmware image *image* before boot.
    """

    image: str
    index: int
    value: int


Op = Union[
    Read,
    Write,
    Fetch,
    Smc,
    Sleep,
    MonitorWork,
    EnterZone,
    Map,
    SendMq,
    GuessToken,
    ReadTokenReg,
    PpcWrite,
    Irq,
    Work,
    PreBootPatch,
]


@dataclass(frozen=True)
class Program:
    """
    A core's program, or a zone's body.

    Attributes:
        ops: The instructions.

        start: Initial placement of the core; ignored for zone bodies.

        trusted:
            Whether faults of this code count against safety.  Attacker
            bodies aren't.
    """

    ops: tuple[Op, ...] = ()
    start: Start = Start.NORMAL
    trusted: bool = True
