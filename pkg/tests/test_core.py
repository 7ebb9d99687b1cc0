import hashlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from uivtsp.core import (
    Digest,
    HashMeter,
    LogicalClock,
    MacAddress,
    SimulationRandom,
    SystemClock,
    canonical_encode,
    digest,
    metered_digest,
    random_mac,
    random_nonce,
)
from uivtsp.errors import ConfigurationError


@pytest.mark.parametrize("width_k", [256, 512, 1024])
def test_digest_width(width_k):
    assert len(digest(b"abc", width_k).value) == width_k // 8
    assert digest(b"abc", width_k).width_k == width_k


def test_digest_of_empty_input_matches_published_vectors():
    assert digest(b"", 256).hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert digest(b"", 512).hex() == (
        "cf83e1357eefb8bdf1542850d66d8007d620e4050b5715dc83f4a921d36ce9ce"
        "47d0d13c5d85f2b0ff8318d2877eec2f63b931bd47417a81a538327af927da3e"
    )


def test_digest_1024_is_two_domain_separated_halves():
    data = b"uiv"
    expected = hashlib.sha512(b"\x00" + data).digest() + hashlib.sha512(b"\x01" + data).digest()
    assert digest(data, 1024).value == expected


def test_digest_rejects_unsupported_width():
    with pytest.raises(ConfigurationError):
        digest(b"abc", 384)


def test_digest_hex_round_trip():
    d = digest(b"abc", 256)
    assert Digest.from_hex(d.hex()) == d
    assert d.short() == d.hex()[:12]
    assert Digest.zero(512).value == bytes(64)


def test_canonical_encode_separates_field_boundaries():
    assert canonical_encode([b"ab", b"c"]) != canonical_encode([b"a", b"bc"])
    assert canonical_encode([b""]) != canonical_encode([])


@given(
    st.lists(st.binary(max_size=8), max_size=4),
    st.lists(st.binary(max_size=8), max_size=4),
)
def test_canonical_encode_is_injective(a, b):
    if a != b:
        assert canonical_encode(a) != canonical_encode(b)


def test_mac_parse_and_format():
    mac = MacAddress.parse("02:AB:00:ff:10:01")
    assert str(mac) == "02:ab:00:ff:10:01"
    assert mac.octets == bytes([0x02, 0xAB, 0x00, 0xFF, 0x10, 0x01])


@pytest.mark.parametrize("text", ["", "02:ab:00:ff:10", "02:ab:00:ff:10:0g", "2:ab:00:ff:10:01"])
def test_mac_parse_rejects_malformed(text):
    with pytest.raises(ConfigurationError):
        MacAddress.parse(text)


def test_random_mac_is_locally_administered_unicast():
    rng = SimulationRandom(3)
    for _ in range(50):
        first = random_mac(rng).octets[0]
        assert first & 0x02
        assert not first & 0x01


def test_simulation_random_is_a_function_of_the_seed():
    a, b = SimulationRandom(42), SimulationRandom(42)
    assert [a.random() for _ in range(5)] == [b.random() for _ in range(5)]
    assert a.randbytes(16) == b.randbytes(16)


def test_fork_does_not_depend_on_parent_consumption():
    fresh = SimulationRandom(9)
    used = SimulationRandom(9)
    used.randbytes(100)
    assert fresh.fork("hosts").randbytes(8) == used.fork("hosts").randbytes(8)
    assert fresh.fork("hosts").randbytes(8) != fresh.fork("order").randbytes(8)


def test_logical_clock_is_monotone():
    clock = LogicalClock(start=100)
    assert clock.advance(5) == 105
    assert clock.now() == 105
    with pytest.raises(ConfigurationError):
        clock.advance(-1)


def test_system_clock_never_decreases():
    clock = SystemClock()
    readings = [clock.now() for _ in range(20)]
    assert readings == sorted(readings)


def test_hash_meter_counts_labelled_calls():
    meter = HashMeter()
    metered_digest(b"a", 256, meter, "rotate")
    metered_digest(b"b", 256, meter, "derive")
    metered_digest(b"c", 256, None, "verify")
    assert meter.total == 2
    assert meter.snapshot() == {"generate": 0, "rotate": 1, "derive": 1, "verify": 0}
    meter.reset()
    assert meter.total == 0


# ---------------------------------------------------------------------------
# Nonces
# ---------------------------------------------------------------------------


def test_random_nonce_is_a_function_of_the_seed():
    a, b = SimulationRandom(42), SimulationRandom(42)
    assert [random_nonce(a) for _ in range(50)] == [random_nonce(b) for _ in range(50)]


def test_random_nonce_does_not_repeat_within_a_stream():
    rng = SimulationRandom(1)
    nonces = [random_nonce(rng) for _ in range(10_000)]
    assert all(len(n) == 16 for n in nonces)
    assert len(set(nonces)) == len(nonces)


def test_random_nonce_differs_across_seeds():
    firsts = {random_nonce(SimulationRandom(seed)) for seed in range(100)}
    assert len(firsts) == 100
