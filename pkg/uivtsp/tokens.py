"""Dynamic access tokens, MAC-bound tracing tokens and the sealed-document trailer.

Trailer layout (appended after the untouched payload, big-endian)::

    offset  size        field
    0       4           magic b"UIVT"
    4       1           embed count (1-4)
    5       2           digest width k in bits
    7       1           false-document flag (0/1)
    8       8           valid_until in ms, 0 when absent
    16      eps * k/8   tracing token copies
"""
from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass, replace
from typing import Collection

from uivtsp.core import (
    SUPPORTED_WIDTHS,
    Digest,
    HashMeter,
    MacAddress,
    Nonce,
    SwId,
    Timestamp,
    VulnerabilityMeta,
    canonical_encode,
    check_width,
    metered_digest,
    u64,
)
from uivtsp.errors import ConfigurationError, IntegrityError, RejectionError, TokenStateError

logger = logging.getLogger(__name__)

TRAILER_MAGIC = b"UIVT"
TRAILER_HEADER = struct.Struct(">4sBHBQ")
MAX_EMBED_COUNT = 4


class TokenStatus(str, enum.Enum):
    active = "active"
    revoked = "revoked"


@dataclass(frozen=True, slots=True)
class AccessToken:
    value: Digest
    sw_id: SwId
    vul_id: str
    epoch: int
    status: TokenStatus
    created_at: Timestamp


@dataclass(frozen=True, slots=True)
class TracingToken:
    value: Digest
    source_epoch: int
    sw_id: SwId
    vul_id: str
    bound_mac: MacAddress


@dataclass(frozen=True, slots=True)
class VulnerabilityDocument:
    meta: VulnerabilityMeta
    payload: bytes

    def __post_init__(self):
        if not self.payload:
            raise ConfigurationError("vulnerability payload must be non-empty")


@dataclass(frozen=True, slots=True)
class SealedDocument:
    doc: VulnerabilityDocument
    embedded_tokens: tuple[Digest, ...]
    is_false: bool = False
    valid_until: Timestamp | None = None

    def __post_init__(self):
        check_embed_count(len(self.embedded_tokens))
        if self.is_false and self.valid_until is None:
            raise ConfigurationError("a false document needs a valid_until")

    @property
    def embed_count(self) -> int:
        return len(self.embedded_tokens)

    @property
    def width_k(self) -> int:
        return self.embedded_tokens[0].width_k

    def to_bytes(self) -> bytes:
        header = TRAILER_HEADER.pack(
            TRAILER_MAGIC,
            self.embed_count,
            self.width_k,
            1 if self.is_false else 0,
            self.valid_until or 0,
        )
        return self.doc.payload + header + b"".join(t.value for t in self.embedded_tokens)


@dataclass(frozen=True, slots=True)
class Trailer:
    embed_count: int
    width_k: int
    is_false: bool
    valid_until: int | None
    copies: tuple[bytes, ...]
    offset: int


def check_embed_count(embed_count: int) -> int:
    if not 1 <= embed_count <= MAX_EMBED_COUNT:
        raise ConfigurationError(f"embed count {embed_count} outside 1-{MAX_EMBED_COUNT}")
    return embed_count


# ---------------------------------------------------------------------------
# Token lifecycle
# ---------------------------------------------------------------------------


def _access_preimage(sw_id: SwId, meta: VulnerabilityMeta, now: Timestamp, nonce: Nonce) -> bytes:
    return canonical_encode([sw_id.encode(), meta.to_bytes(), u64(now), nonce])


def generate_access_token(
    sw_id: SwId,
    meta: VulnerabilityMeta,
    now: Timestamp,
    nonce: Nonce,
    width_k: int,
    *,
    pool: Collection[SwId] | None = None,
    epoch: int = 0,
    meter: HashMeter | None = None,
) -> AccessToken:
    """Initial token for a (worker, vulnerability) pair.

    ``epoch`` is non-zero only when a worker is re-admitted after its previous
    token was revoked.
    """
    check_width(width_k)
    if pool is not None and sw_id not in pool:
        raise RejectionError(f"worker {sw_id!r} is not in the registered pool")
    value = metered_digest(_access_preimage(sw_id, meta, now, nonce), width_k, meter, "generate")
    return AccessToken(
        value=value,
        sw_id=sw_id,
        vul_id=meta.vul_id,
        epoch=epoch,
        status=TokenStatus.active,
        created_at=now,
    )


def rotate_access_token(
    current: AccessToken,
    meta: VulnerabilityMeta,
    now: Timestamp,
    fresh_nonce: Nonce,
    *,
    meter: HashMeter | None = None,
) -> tuple[AccessToken, AccessToken]:
    if current.status is not TokenStatus.active:
        raise TokenStateError(f"cannot rotate a {current.status.value} token")
    revoked = replace(current, status=TokenStatus.revoked)
    value = metered_digest(
        _access_preimage(current.sw_id, meta, now, fresh_nonce),
        current.value.width_k,
        meter,
        "rotate",
    )
    nxt = AccessToken(
        value=value,
        sw_id=current.sw_id,
        vul_id=current.vul_id,
        epoch=current.epoch + 1,
        status=TokenStatus.active,
        created_at=now,
    )
    return revoked, nxt


def tracing_preimage(token_value: Digest, mac: MacAddress) -> bytes:
    return canonical_encode([token_value.value, mac.octets])


def derive_tracing_token(
    revoked: AccessToken, mac: MacAddress, *, meter: HashMeter | None = None
) -> TracingToken:
    if revoked.status is not TokenStatus.revoked:
        raise TokenStateError("tracing tokens derive only from a revoked access token")
    value = metered_digest(
        tracing_preimage(revoked.value, mac), revoked.value.width_k, meter, "derive"
    )
    return TracingToken(
        value=value,
        source_epoch=revoked.epoch,
        sw_id=revoked.sw_id,
        vul_id=revoked.vul_id,
        bound_mac=mac,
    )


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------


def embed_tracing_token(
    doc: VulnerabilityDocument,
    token: TracingToken,
    embed_count: int,
    is_false: bool = False,
    valid_until: Timestamp | None = None,
) -> SealedDocument:
    check_embed_count(embed_count)
    if is_false and valid_until is None:
        raise ConfigurationError("a false document needs a valid_until")
    return SealedDocument(
        doc=doc,
        embedded_tokens=(token.value,) * embed_count,
        is_false=is_false,
        valid_until=valid_until if is_false else None,
    )


def parse_trailer(data: bytes) -> Trailer | None:
    """Locate the trailer at the end of ``data``; None when no candidate layout matches."""
    for width_k in SUPPORTED_WIDTHS:
        token_size = width_k // 8
        for embed_count in range(1, MAX_EMBED_COUNT + 1):
            size = TRAILER_HEADER.size + embed_count * token_size
            if len(data) <= size:
                continue
            offset = len(data) - size
            magic, eps, k, flag, valid_until = TRAILER_HEADER.unpack_from(data, offset)
            if magic != TRAILER_MAGIC or eps != embed_count or k != width_k or flag > 1:
                continue
            start = offset + TRAILER_HEADER.size
            copies = tuple(
                data[start + i * token_size : start + (i + 1) * token_size]
                for i in range(embed_count)
            )
            return Trailer(
                embed_count=eps,
                width_k=k,
                is_false=bool(flag),
                valid_until=valid_until or None,
                copies=copies,
                offset=offset,
            )
    return None


def trailer_token(trailer: Trailer) -> Digest:
    """The embedded value once every copy agrees byte for byte."""
    first = trailer.copies[0]
    for copy in trailer.copies[1:]:
        if copy != first:
            raise IntegrityError(f"{trailer.embed_count} embedded copies disagree")
    return Digest(first)


def extract_tracing_token(sealed: bytes | SealedDocument) -> Digest | None:
    data = sealed.to_bytes() if isinstance(sealed, SealedDocument) else sealed
    trailer = parse_trailer(data)
    if trailer is None:
        return None
    return trailer_token(trailer)
