import pytest

from uivtsp.core import HashMeter, Nonce, SwId, Timestamp
from uivtsp.errors import PreconditionError
from uivtsp.guard import (
    Destroyed,
    DestroyedSilent,
    FalseDocObserved,
    GuardContext,
    HostEnvironment,
    Lurk,
    VerificationFlag,
    enforce,
    self_check,
    simulate_exfiltration,
)
from uivtsp.tokens import (
    derive_tracing_token,
    embed_tracing_token,
    generate_access_token,
    rotate_access_token,
)

from tests.conftest import MAC_A, MAC_B, MAC_C

NOW = Timestamp(1_700_000_000_000)


@pytest.fixture()
def licensed(doc):
    """(revoked token, next token) for alice, with the tracing token bound to MAC_A."""
    token = generate_access_token(SwId("alice"), doc.meta, NOW, Nonce(bytes(16)), 256)
    return rotate_access_token(token, doc.meta, NOW, Nonce(b"\x05" * 16))


def _seal(doc, revoked, embed_count=1, valid_until=None):
    tracing = derive_tracing_token(revoked, MAC_A)
    return embed_tracing_token(
        doc, tracing, embed_count, is_false=valid_until is not None, valid_until=valid_until
    )


def _context(revoked):
    return GuardContext(revoked.sw_id, revoked.vul_id, revoked.value)


def test_self_check_polarity(doc, licensed):
    revoked, nxt = licensed
    sealed = _seal(doc, revoked)
    assert self_check(sealed, revoked.value, HostEnvironment(MAC_A, NOW)) is VerificationFlag.match
    assert self_check(sealed, revoked.value, HostEnvironment(MAC_B, NOW)) is VerificationFlag.mismatch
    # the right host with the wrong epoch's token
    assert self_check(sealed, nxt.value, HostEnvironment(MAC_A, NOW)) is VerificationFlag.mismatch


def test_self_check_needs_a_trailer(doc, licensed):
    with pytest.raises(PreconditionError):
        self_check(doc.payload, licensed[0].value, HostEnvironment(MAC_A, NOW))


def test_real_document_lurks_on_licensed_host(doc, licensed):
    revoked, _ = licensed
    verdict = enforce(_seal(doc, revoked), revoked.value, HostEnvironment(MAC_A, NOW), _context(revoked))
    assert verdict == Lurk()


@pytest.mark.parametrize("embed_count", [1, 4])
def test_real_document_destroyed_off_host(doc, licensed, embed_count):
    revoked, _ = licensed
    sealed = _seal(doc, revoked, embed_count)
    verdict = enforce(sealed, revoked.value, HostEnvironment(MAC_B, Timestamp(NOW + 3)), _context(revoked))
    assert isinstance(verdict, Destroyed)
    fb = verdict.feedback
    assert fb.mac_current == MAC_B
    assert fb.t_feedback == NOW + 3
    assert fb.tracing_value == sealed.embedded_tokens[0]
    assert (fb.sw_id, fb.vul_id) == ("alice", doc.meta.vul_id)


def test_missing_trailer_is_destroyed_silently(doc, licensed):
    revoked, _ = licensed
    verdict = enforce(doc.payload, revoked.value, HostEnvironment(MAC_A, NOW), _context(revoked))
    assert isinstance(verdict, DestroyedSilent)


def test_corrupted_copies_are_destroyed_silently(doc, licensed):
    revoked, _ = licensed
    data = bytearray(_seal(doc, revoked, embed_count=2).to_bytes())
    data[-1] ^= 0x01
    verdict = enforce(bytes(data), revoked.value, HostEnvironment(MAC_A, NOW), _context(revoked))
    assert verdict == DestroyedSilent("corrupted tracing token")


def test_false_document_window(doc, licensed):
    revoked, _ = licensed
    valid_until = Timestamp(NOW + 100)
    sealed = _seal(doc, revoked, valid_until=valid_until)
    ctx = _context(revoked)

    inside = enforce(sealed, revoked.value, HostEnvironment(MAC_B, valid_until), ctx)
    assert isinstance(inside, FalseDocObserved)
    assert inside.feedback.mac_current == MAC_B

    after = enforce(sealed, revoked.value, HostEnvironment(MAC_B, Timestamp(valid_until + 1)), ctx)
    assert isinstance(after, DestroyedSilent)

    home = enforce(sealed, revoked.value, HostEnvironment(MAC_A, Timestamp(valid_until + 1)), ctx)
    assert home == Lurk()


def test_enforce_costs_one_hash_regardless_of_copies(doc, licensed):
    revoked, _ = licensed
    meter = HashMeter()
    sealed = _seal(doc, revoked, embed_count=4)
    enforce(sealed, revoked.value, HostEnvironment(MAC_B, NOW), _context(revoked), meter=meter)
    assert meter.snapshot() == {"generate": 0, "rotate": 0, "derive": 0, "verify": 1}


def test_exfiltration_needs_a_new_host(doc, licensed):
    revoked, _ = licensed
    env = HostEnvironment(MAC_A, NOW)
    with pytest.raises(PreconditionError):
        simulate_exfiltration(_seal(doc, revoked), env, env, _context(revoked))


def test_exfiltration_copies_bytes_unchanged(doc, licensed):
    revoked, _ = licensed
    sealed = _seal(doc, revoked)
    copy, verdict = simulate_exfiltration(
        sealed, HostEnvironment(MAC_A, NOW), HostEnvironment(MAC_B, NOW), _context(revoked)
    )
    assert copy.to_bytes() == sealed.to_bytes()
    assert isinstance(verdict, Destroyed)


def test_two_hop_trap_reports_both_hosts(doc, licensed):
    revoked, _ = licensed
    sealed = _seal(doc, revoked, valid_until=Timestamp(NOW + 100))
    ctx = _context(revoked)
    first, v1 = simulate_exfiltration(sealed, HostEnvironment(MAC_A, NOW), HostEnvironment(MAC_B, NOW), ctx)
    _, v2 = simulate_exfiltration(first, HostEnvironment(MAC_B, NOW), HostEnvironment(MAC_C, NOW), ctx)
    assert [v1.feedback.mac_current, v2.feedback.mac_current] == [MAC_B, MAC_C]

