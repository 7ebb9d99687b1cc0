from dataclasses import replace

import pytest

from uivtsp.core import HashMeter, MacAddress, Nonce, SimulationRandom, SwId, Timestamp, digest, random_nonce
from uivtsp.errors import ConfigurationError, IntegrityError, RejectionError, TokenStateError
from uivtsp.tokens import (
    TRAILER_HEADER,
    TokenStatus,
    derive_tracing_token,
    embed_tracing_token,
    extract_tracing_token,
    generate_access_token,
    parse_trailer,
    rotate_access_token,
    tracing_preimage,
)

from tests.conftest import MAC_A, MAC_B

NOW = Timestamp(1_700_000_000_000)
NONCE = Nonce(bytes(16))


def _revoked(meta, width_k=256, meter=None):
    token = generate_access_token(SwId("alice"), meta, NOW, NONCE, width_k)
    revoked, _ = rotate_access_token(token, meta, Timestamp(NOW + 1), Nonce(b"\x01" * 16), meter=meter)
    return revoked


# ---------------------------------------------------------------------------
# Access tokens
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("width_k", [256, 512, 1024])
def test_generate_access_token(meta, width_k):
    meter = HashMeter()
    token = generate_access_token(SwId("alice"), meta, NOW, NONCE, width_k, meter=meter)
    assert token.value.width_k == width_k
    assert token.epoch == 0
    assert token.status is TokenStatus.active
    assert meter.snapshot()["generate"] == 1


def test_generate_is_deterministic_and_nonce_sensitive(meta):
    a = generate_access_token(SwId("alice"), meta, NOW, NONCE, 256)
    b = generate_access_token(SwId("alice"), meta, NOW, NONCE, 256)
    c = generate_access_token(SwId("alice"), meta, NOW, Nonce(b"\x02" * 16), 256)
    assert a.value == b.value
    assert a.value != c.value


def test_generate_rejects_worker_outside_pool(meta):
    with pytest.raises(RejectionError):
        generate_access_token(SwId("mallory"), meta, NOW, NONCE, 256, pool={SwId("alice")})


def test_generate_rejects_unsupported_width(meta):
    with pytest.raises(ConfigurationError):
        generate_access_token(SwId("alice"), meta, NOW, NONCE, 128)


def test_rotate_revokes_and_advances_epoch(meta):
    meter = HashMeter()
    token = generate_access_token(SwId("alice"), meta, NOW, NONCE, 256)
    revoked, nxt = rotate_access_token(token, meta, Timestamp(NOW + 5), Nonce(b"\x09" * 16), meter=meter)
    assert revoked.value == token.value
    assert revoked.status is TokenStatus.revoked
    assert nxt.status is TokenStatus.active
    assert nxt.epoch == 1
    assert nxt.value != token.value
    assert meter.snapshot()["rotate"] == 1


def test_ten_rotations_give_eleven_distinct_values(meta):
    rng = SimulationRandom(8)
    token = generate_access_token(SwId("alice"), meta, NOW, random_nonce(rng), 256)
    values = [token.value]
    for step in range(1, 11):
        _, token = rotate_access_token(token, meta, Timestamp(NOW + step), random_nonce(rng))
        values.append(token.value)
    assert token.epoch == 10
    assert len(set(values)) == 11


def test_rotate_refuses_revoked_token(meta):
    with pytest.raises(TokenStateError):
        rotate_access_token(_revoked(meta), meta, NOW, NONCE)


# ---------------------------------------------------------------------------
# Tracing tokens
# ---------------------------------------------------------------------------


def test_derive_binds_revoked_token_to_mac(meta):
    meter = HashMeter()
    revoked = _revoked(meta)
    tracing = derive_tracing_token(revoked, MAC_A, meter=meter)
    assert tracing.value == digest(tracing_preimage(revoked.value, MAC_A), 256)
    assert tracing.source_epoch == revoked.epoch
    assert tracing.bound_mac == MAC_A
    assert meter.snapshot()["derive"] == 1


def test_derive_differs_per_mac(meta):
    revoked = _revoked(meta)
    assert derive_tracing_token(revoked, MAC_A).value != derive_tracing_token(revoked, MAC_B).value


def test_derive_refuses_active_token(meta):
    token = generate_access_token(SwId("alice"), meta, NOW, NONCE, 256)
    with pytest.raises(TokenStateError):
        derive_tracing_token(token, MAC_A)


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("width_k", [256, 512, 1024])
@pytest.mark.parametrize("embed_count", [1, 2, 3, 4])
def test_sealed_size_and_extraction(doc, width_k, embed_count):
    tracing = derive_tracing_token(_revoked(doc.meta, width_k), MAC_A)
    sealed = embed_tracing_token(doc, tracing, embed_count)
    data = sealed.to_bytes()
    assert len(data) == len(doc.payload) + TRAILER_HEADER.size + embed_count * width_k // 8
    assert data.startswith(doc.payload)
    assert extract_tracing_token(sealed) == tracing.value
    trailer = parse_trailer(data)
    assert trailer.embed_count == embed_count
    assert trailer.width_k == width_k
    assert trailer.offset == len(doc.payload)


@pytest.mark.parametrize("embed_count", [0, 5])
def test_embed_count_bounds(doc, embed_count):
    tracing = derive_tracing_token(_revoked(doc.meta), MAC_A)
    with pytest.raises(ConfigurationError):
        embed_tracing_token(doc, tracing, embed_count)


def test_false_document_needs_valid_until(doc):
    tracing = derive_tracing_token(_revoked(doc.meta), MAC_A)
    with pytest.raises(ConfigurationError):
        embed_tracing_token(doc, tracing, 1, is_false=True)
    sealed = embed_tracing_token(doc, tracing, 1, is_false=True, valid_until=Timestamp(NOW + 10))
    trailer = parse_trailer(sealed.to_bytes())
    assert trailer.is_false
    assert trailer.valid_until == NOW + 10


def test_extraction_without_trailer(doc):
    assert extract_tracing_token(doc.payload) is None
    assert parse_trailer(b"") is None


def test_disagreeing_copies_fail_integrity(doc):
    tracing = derive_tracing_token(_revoked(doc.meta), MAC_A)
    sealed = embed_tracing_token(doc, tracing, 2)
    forged = replace(sealed, embedded_tokens=(tracing.value, digest(b"other", 256)))
    with pytest.raises(IntegrityError):
        extract_tracing_token(forged)


def test_single_copy_corruption_is_undetectable_but_changes_the_token(doc):
    tracing = derive_tracing_token(_revoked(doc.meta), MAC_A)
    data = bytearray(embed_tracing_token(doc, tracing, 1).to_bytes())
    data[-1] ^= 0xFF
    assert extract_tracing_token(bytes(data)) != tracing.value


def test_mac_value_type_is_used_for_binding(meta):
    revoked = _revoked(meta)
    same = MacAddress(bytes(MAC_A.octets))
    assert derive_tracing_token(revoked, same).value == derive_tracing_token(revoked, MAC_A).value
