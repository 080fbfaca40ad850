# SPDX-License-Identifier: MIT

"""
The gatekeeper: the auxiliary core's reference monitor.

It owns the partition controller's lock, shares a boot-time secret token
with EL3, and answers lock and unlock requests arriving over the message
unit.  It also runs secure boot.
"""

from __future__ import annotations

import logging
import random

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from ._utils import _check_types, measure
from .cpu import Soc
from .exceptions import BootOrderViolation, SecureBootError
from .ppc import (
    DID_CLUSTER,
    MID_ACU,
    PpcState,
    SetLock,
    SetPerm,
    ppc_boot_init,
    ppc_write_config,
)
from .topology import (
    EL,
    GATEKEEPER,
    PAGE_SIZE,
    PPC_MMIO,
    LayoutConfig,
    Permission,
    World,
    build_layout,
)
from .trace import Trace
from .zones import ZoneManifest


__all__ = [
    "DEFAULT_TOKEN_BITS",
    "Channel",
    "GatekeeperState",
    "Mailbox",
    "MqMessage",
    "MsgKind",
    "gk_boot",
    "gk_handle",
    "guess_trials",
    "secure_boot",
    "trusted_manifest",
]

_log = logging.getLogger(__name__)

DEFAULT_TOKEN_BITS = 64


class Channel(Enum):
    A_TO_B = "MU_A->B"
    B_TO_A = "MU_B->A"


class MsgKind(Enum):
    UNLOCK_PPC = "UNLOCK_PPC"
    LOCK_PPC = "LOCK_PPC"
    ACK = "ACK"
    NACK = "NACK"


@dataclass(frozen=True)
class MqMessage:
    channel: Channel
    kind: MsgKind
    token_claim: int = 0


@dataclass(frozen=True)
class Mailbox:
    """
    The message unit's single mailbox.

    There's room for one request and one reply; a request stays pending
    until the gatekeeper has answered it.

    Attributes:
        request: The pending request, if any.

        sender: Core that posted *request*.

        reply: The answer waiting to be collected by *sender*.
    """

    request: MqMessage | None = None
    sender: int | None = None
    reply: MqMessage | None = None

    @property
    def busy(self) -> bool:
        return self.request is not None or self.reply is not None

    def post(self, msg: MqMessage, sender: int) -> Mailbox:
        if self.busy:
            err = "the mailbox holds one message at a time"
            raise ValueError(err)
        return Mailbox(request=msg, sender=sender)

    def answer(self, reply: MqMessage) -> Mailbox:
        return replace(self, request=None, reply=reply)

    def collect(self) -> tuple[MqMessage | None, Mailbox]:
        return self.reply, Mailbox()


@dataclass(frozen=True)
class GatekeeperState:
    """
    Attributes:
        token: The shared secret.

        booted: Set by :func:`gk_boot`.

        token_bits: Width of *token*.

        auth_failures:
            Number of requests refused for a wrong token.  Exposed, but no
            policy acts on it.

        check_token: Whether requests are authenticated at all.
    """

    token: int = 0
    booted: bool = False
    token_bits: int = DEFAULT_TOKEN_BITS
    auth_failures: int = 0
    check_token: bool = True

    def __repr__(self) -> str:
        return (
            f"GatekeeperState(booted={self.booted}, "
            f"token_bits={self.token_bits}, "
            f"auth_failures={self.auth_failures})"
        )


def _generate_token(rng_seed: int, token_bits: int) -> int:
    return random.Random(rng_seed).getrandbits(token_bits)


def trusted_manifest(images: Mapping[str, Sequence[int]]) -> dict[str, str]:
    """
    Measure pristine *images* into a manifest.
    """
    return {name: measure(words) for name, words in images.items()}


def secure_boot(
    images: Mapping[str, Sequence[int]],
    manifest: Mapping[str, str],
    trace: Trace | None = None,
) -> None:
    """
    Verify every firmware image against the trusted *manifest*.

    Raises:
        rezone.exceptions.SecureBootError:
            If an image is missing from the manifest or its measurement
            differs.  The boot sequence is aborted.
    """
    for name in sorted(images):
        expected = manifest.get(name)
        got = measure(images[name])
        if expected != got:
            if trace is not None:
                trace.emit("BOOT", stage="secure_boot", detail=f"{name}: bad")
            _log.warning("secure boot refused image %r", name)
            msg = f"image {name!r} fails its integrity check"
            raise SecureBootError(msg)

    if trace is not None:
        trace.emit(
            "BOOT", stage="secure_boot", detail=f"{len(images)} images ok"
        )


def gk_boot(
    soc: Soc,
    rng_seed: int,
    *,
    token_bits: int = DEFAULT_TOKEN_BITS,
    check_token: bool = True,
    untrusted_started: bool = False,
    other_masters: bool = False,
) -> tuple[GatekeeperState, int]:
    """
    Boot the gatekeeper and hand the token to EL3.

    Configures the partition controller if that didn't happen yet, draws the
    token from a PRNG seeded with *rng_seed*, stores it in GATEKEEPER memory
    and in every core's token register.  The controller ends up locked.

    Raises:
        rezone.exceptions.BootOrderViolation:
            If untrusted code already ran.
    """
    e = _check_types(rng_seed=(rng_seed, int), token_bits=(token_bits, int))
    if e:
        raise TypeError(e)
    if untrusted_started:
        msg = "the gatekeeper boots before any zone or normal-world step"
        raise BootOrderViolation(msg)
    if token_bits < 1:
        msg = "'token_bits' must be positive"
        raise ValueError(msg)

    if not soc.ppc.booted:
        soc.ppc = ppc_boot_init(
            soc.layout, other_masters=other_masters, trace=soc.trace
        )
    elif not soc.ppc.locked:
        soc.ppc = ppc_write_config(soc.ppc, MID_ACU, SetLock(True), soc.trace)

    token = _generate_token(rng_seed, token_bits)
    soc.store(soc.layout[GATEKEEPER].start, token)
    for core in soc.cluster.cores:
        # Boot ROM runs every core at EL3 for the handoff.
        el, world = core.el, core.world
        core.el, core.world = EL.EL3, World.SECURE
        core.write_token_reg(token)
        core.el, core.world = el, world

    soc.trace.emit("BOOT", stage="gatekeeper", detail=f"{token_bits}-bit token")
    _log.debug("gatekeeper booted, token handed to %d cores", len(soc.cluster.cores))

    return (
        GatekeeperState(
            token=token,
            booted=True,
            token_bits=token_bits,
            check_token=check_token,
        ),
        token,
    )


def gk_handle(
    state: GatekeeperState,
    msg: MqMessage,
    ppc: PpcState,
    trace: Trace | None = None,
) -> tuple[GatekeeperState, MqMessage, PpcState]:
    """
    Answer one request.

    A correct ``UNLOCK_PPC`` lifts the lock and grants DID_0 RW on the
    controller's registers so the trampoline can reconfigure on the
    gatekeeper's behalf; a correct ``LOCK_PPC`` takes that back.  Anything
    else gets a NACK and leaves the controller alone.

    Returns:
        The new gatekeeper state, the reply, and the new controller state.
    """
    if not state.booted:
        err = "the gatekeeper hasn't booted"
        raise ValueError(err)

    authentic = not state.check_token or msg.token_claim == state.token
    if (
        msg.channel is not Channel.A_TO_B
        or msg.kind not in (MsgKind.UNLOCK_PPC, MsgKind.LOCK_PPC)
        or not authentic
    ):
        state = replace(state, auth_failures=state.auth_failures + 1)
        if trace is not None:
            trace.emit("AUTH_FAIL", failures=state.auth_failures)
            trace.emit(
                "MQ_REPLY", channel=Channel.B_TO_A.value, message="NACK"
            )
        _log.info(
            "refused %s request (%d failures so far)",
            msg.kind.value,
            state.auth_failures,
        )
        return state, MqMessage(Channel.B_TO_A, MsgKind.NACK), ppc

    if msg.kind is MsgKind.UNLOCK_PPC:
        ppc = ppc_write_config(ppc, MID_ACU, SetLock(False), trace)
        ppc = ppc_write_config(
            ppc,
            MID_ACU,
            SetPerm(DID_CLUSTER, PPC_MMIO, Permission.RW),
            trace,
        )
    else:
        ppc = ppc_write_config(ppc, MID_ACU, SetLock(True), trace)

    if trace is not None:
        trace.emit("MQ_REPLY", channel=Channel.B_TO_A.value, message="ACK")

    return state, MqMessage(Channel.B_TO_A, MsgKind.ACK), ppc


def guess_trials(k: int, seeds: Iterable[int]) -> list[int]:
    """
    For each seed, boot a *k*-bit gatekeeper and enumerate token claims
    0, 1, 2, ... until an unlock request is acknowledged.

    Returns:
        The number of requests needed, per seed.
    """
    layout = build_layout(
        [ZoneManifest(1, PAGE_SIZE, (64, 128))], LayoutConfig()
    )
    base = ppc_boot_init(layout)
    attempts = []
    for seed in seeds:
        state = GatekeeperState(
            token=_generate_token(seed, k), booted=True, token_bits=k
        )
        for claim in range(2**k):
            state, reply, _ = gk_handle(
                state,
                MqMessage(Channel.A_TO_B, MsgKind.UNLOCK_PPC, claim),
                base,
            )
            if reply.kind is MsgKind.ACK:
                attempts.append(claim + 1)
                break

    return attempts

