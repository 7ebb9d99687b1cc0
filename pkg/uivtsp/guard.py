"""In-process simulation of the leak guard that travels with every released document.

The guard recomputes the tracing token from the revoked access token and the
current host MAC. A match means the document sits on its licensed host and
the guard keeps lurking; a mismatch destroys the document and reports back,
except for trap documents inside their valid window, which stay alive and
report where they went.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import NamedTuple, Union

from uivtsp.core import Digest, HashMeter, MacAddress, SwId, Timestamp, metered_digest
from uivtsp.errors import IntegrityError, PreconditionError
from uivtsp.tokens import SealedDocument, Trailer, parse_trailer, trailer_token, tracing_preimage

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class HostEnvironment:
    mac: MacAddress
    now: Timestamp


class VerificationFlag(enum.IntEnum):
    match = 0
    mismatch = 1


@dataclass(frozen=True, slots=True)
class FeedbackMessage:
    tracing_value: Digest
    vul_id: str
    sw_id: SwId
    mac_current: MacAddress
    t_feedback: Timestamp


@dataclass(frozen=True, slots=True)
class GuardContext:
    """What the guard carries sealed inside it: the licensee and the revoked token."""

    sw_id: SwId
    vul_id: str
    revoked_token_value: Digest


@dataclass(frozen=True, slots=True)
class Lurk:
    pass


@dataclass(frozen=True, slots=True)
class Destroyed:
    feedback: FeedbackMessage


@dataclass(frozen=True, slots=True)
class DestroyedSilent:
    reason: str = ""


@dataclass(frozen=True, slots=True)
class FalseDocObserved:
    feedback: FeedbackMessage


GuardVerdict = Union[Lurk, Destroyed, DestroyedSilent, FalseDocObserved]


class Exfiltration(NamedTuple):
    copy: SealedDocument
    verdict: GuardVerdict


def _flag(
    embedded: Digest, revoked_token_value: Digest, mac: MacAddress, meter: HashMeter | None
) -> VerificationFlag:
    recomputed = metered_digest(
        tracing_preimage(revoked_token_value, mac), revoked_token_value.width_k, meter, "verify"
    )
    return VerificationFlag.match if recomputed == embedded else VerificationFlag.mismatch


def self_check(
    sealed: SealedDocument | bytes,
    revoked_token_value: Digest,
    env: HostEnvironment,
    *,
    meter: HashMeter | None = None,
) -> VerificationFlag:
    data = sealed.to_bytes() if isinstance(sealed, SealedDocument) else sealed
    trailer = parse_trailer(data)
    if trailer is None:
        raise PreconditionError("document carries no tracing token")
    return _flag(trailer_token(trailer), revoked_token_value, env.mac, meter)


def enforce(
    sealed: SealedDocument | bytes,
    revoked_token_value: Digest,
    env: HostEnvironment,
    context: GuardContext,
    *,
    meter: HashMeter | None = None,
) -> GuardVerdict:
    data = sealed.to_bytes() if isinstance(sealed, SealedDocument) else sealed
    trailer: Trailer | None = parse_trailer(data)
    if trailer is None:
        return DestroyedSilent("no tracing token")
    try:
        embedded = trailer_token(trailer)
    except IntegrityError as exc:
        logger.warning("Guard for %s/%s: %s", context.sw_id, context.vul_id, exc)
        return DestroyedSilent("corrupted tracing token")

    if _flag(embedded, revoked_token_value, env.mac, meter) is VerificationFlag.match:
        return Lurk()

    feedback = FeedbackMessage(
        tracing_value=embedded,
        vul_id=context.vul_id,
        sw_id=context.sw_id,
        mac_current=env.mac,
        t_feedback=env.now,
    )
    if not trailer.is_false:
        return Destroyed(feedback)
    if trailer.valid_until is not None and env.now <= trailer.valid_until:
        return FalseDocObserved(feedback)
    return DestroyedSilent("false document expired")


def simulate_exfiltration(
    sealed: SealedDocument,
    from_env: HostEnvironment,
    to_env: HostEnvironment,
    context: GuardContext,
    *,
    meter: HashMeter | None = None,
) -> Exfiltration:
    """Move one copy a single hop and let its guard decide at the destination."""
    if from_env.mac == to_env.mac:
        raise PreconditionError("exfiltration needs a different destination host")
    verdict = enforce(sealed, context.revoked_token_value, to_env, context, meter=meter)
    logger.debug(
        "Copy of %s from %s moved %s -> %s: %s",
        context.vul_id,
        context.sw_id,
        from_env.mac,
        to_env.mac,
        type(verdict).__name__,
    )
    return Exfiltration(sealed, verdict)
