# SPDX-License-Identifier: MIT

"""
The simulation trace: an ordered record of every access, check, maintenance
step, and message.

Traces are used for replay, cost accounting, and property checking.  Their
JSON-lines serialization is byte-deterministic: identical simulations
produce identical logs.
"""

from __future__ import annotations

import json

from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping


__all__ = ["TRACE_SCHEMA", "Trace", "TraceEvent"]


TRACE_SCHEMA: Mapping[str, tuple[str, ...]] = {
    # cpu
    "MEM": (
        "core",
        "el",
        "world",
        "zone",
        "va",
        "pa",
        "ns",
        "region",
        "access",
        "fetch",
        "hit",
        "verdict",
        "value",
    ),
    "TLB_WALK": ("core", "pa", "verdict"),
    "WRITEBACK": ("pa", "region", "verdict"),
    "FLUSH": ("core", "lines"),
    "INVALIDATE": ("region", "lines"),
    "TLBI": ("entries",),
    "COHERENCY": ("on",),
    "MMU": ("on",),
    "HALTED": ("core",),
    "RESUMED": ("core",),
    "TOKEN_TRAP": ("core", "el"),
    "EL3_EXEC": ("core", "pa", "tainted"),
    "FAULT": ("core", "fault", "detail", "honest"),
    # ppc
    "PPC_CHECK": ("mid", "region", "access", "verdict"),
    "PPC_CONFIG": ("requester", "edit", "applied"),
    # gatekeeper
    "BOOT": ("stage", "detail"),
    "MQ_SEND": ("channel", "message", "sender"),
    "MQ_REPLY": ("channel", "message"),
    "AUTH_FAIL": ("failures",),
    # monitor
    "PHASE": ("core", "phase"),
    "SMC": ("core", "id", "route"),
    "LOCK": ("holder",),
    "IPI": ("src", "dst"),
    "CTX": ("core", "op", "context"),
    "IRQ": ("core", "handling"),
    "ENTRY_ABORT": ("core", "zone"),
    "DONE": ("core",),
    "WORK": ("core", "units"),
    "WAKE": ("core", "vector"),
}


@dataclass(frozen=True)
class TraceEvent:
    """
    One trace record.

    Attributes:
        seq: Position in the trace, starting at 0.

        kind: One of the keys of :data:`TRACE_SCHEMA`.

        actor: The scheduled actor that caused the event (``"boot"`` before
            the first step).

        phase: The protocol phase the actor was in.

        fields: Kind-specific payload.
    """

    seq: int
    kind: str
    actor: str
    phase: str
    fields: Mapping[str, Any] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Any:
        return self.fields[name]

    def get(self, name: str, default: Any = None) -> Any:
        return self.fields.get(name, default)

    def to_record(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "actor": self.actor,
            "phase": self.phase,
            **self.fields,
        }

    def to_json(self) -> str:
        return json.dumps(
            self.to_record(), sort_keys=True, separators=(",", ":")
        )


class Trace:
    """
    Append-only event log.

    The simulator sets :attr:`actor` and :attr:`phase` before each step; they
    are stamped onto every event emitted during that step.
    """

    __slots__ = ("_events", "actor", "phase")

    def __init__(self) -> None:
        self._events: list[TraceEvent] = []
        self.actor = "boot"
        self.phase = "BOOT"

    def emit(self, kind: str, /, **fields: Any) -> TraceEvent:
        try:
            allowed = TRACE_SCHEMA[kind]
        except KeyError:
            msg = f"unknown trace event kind {kind!r}"
            raise ValueError(msg) from None
        unknown = set(fields) - set(allowed)
        if unknown:
            msg = f"{kind} has no fields {sorted(unknown)}"
            raise ValueError(msg)

        ev = TraceEvent(
            seq=len(self._events),
            kind=kind,
            actor=self.actor,
            phase=self.phase,
            fields=fields,
        )
        self._events.append(ev)

        return ev

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self._events)

    def __getitem__(self, i: int) -> TraceEvent:
        return self._events[i]

    def since(self, mark: int) -> list[TraceEvent]:
        """
        Events emitted after *mark* events had been recorded.
        """
        return self._events[mark:]

    def of_kind(self, *kinds: str) -> list[TraceEvent]:
        return [e for e in self._events if e.kind in kinds]

    def phases(self, core: int | None = None) -> list[str]:
        """
        The sequence of protocol phases entered, optionally for one core.
        """
        return [
            e["phase"]
            for e in self._events
            if e.kind == "PHASE" and (core is None or e["core"] == core)
        ]

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self._events)

    @classmethod
    def from_events(cls, events: Iterable[TraceEvent]) -> Trace:
        t = cls()
        t._events = list(events)
        return t
