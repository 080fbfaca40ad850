# SPDX-License-Identifier: MIT

from __future__ import annotations


class RezoneError(Exception):
    """
    Superclass of all rezone exceptions.

    Never thrown directly.

    Hardware-level denials (PPC or TZASC faults, NACKed gatekeeper requests)
    are *not* exceptions. They are returned as values and recorded in the
    trace so that attacker programs keep running.
    """


class LayoutError(RezoneError):
    """
    The physical memory layout can't be built.
    """


class OverlapError(LayoutError):
    """
    The requested regions don't fit into the configured address space.
    """


class PpcError(RezoneError):
    """
    Superclass of partition controller misuse.
    """


class DoubleInitError(PpcError):
    """
    The partition controller was initialized twice.
    """


class UnknownMaster(PpcError, LookupError):
    """
    A bus master that isn't bound to any security domain issued a request.
    """


class ZoneError(RezoneError):
    """
    Superclass of zone registry errors.
    """


class DuplicateZoneId(LayoutError, ZoneError):
    """
    Two zone manifests share the same zone id.
    """


class SmcRangeOverlap(ZoneError):
    """
    Two zones claim overlapping SMC id ranges, or a zone claims the
    reserved monitor-service range.
    """


class LateRegistration(ZoneError):
    """
    A zone was registered after the normal world started running.
    """


class UnknownZone(ZoneError, LookupError):
    """
    A zone id that isn't registered was referenced.
    """


class BootError(RezoneError):
    """
    Superclass of secure boot failures.
    """


class BootOrderViolation(BootError):
    """
    Untrusted code ran before the gatekeeper booted.
    """


class SecureBootError(BootError):
    """
    A firmware image doesn't match its measurement in the trusted manifest.

    The name of the offending image is in ``args[0]``.
    """


class EntryAbort(RezoneError):
    """
    The gatekeeper refused to unlock the partition controller during an
    honest zone entry.

    The system is left fail-closed in the monitor permission row.
    """


class BudgetExceeded(RezoneError):
    """
    Exploration visited more states than the configured budget allows.
    """


class ScenarioError(ValueError):
    """
    Raised if a scenario document is invalid.

    The dotted path of the offending field is in :attr:`field`.
    """

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field
