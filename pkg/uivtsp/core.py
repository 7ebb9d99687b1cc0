"""Shared primitives: identifiers, canonical hash-input encoding and the k-bit digest."""
from __future__ import annotations

import hashlib
import random
import time
from collections import Counter
from dataclasses import dataclass
from typing import NewType, Sequence

from uivtsp.errors import ConfigurationError

SUPPORTED_WIDTHS = (256, 512, 1024)
NONCE_SIZE = 16
CLOCK_START_MS = 1_700_000_000_000

SwId = NewType("SwId", str)
Timestamp = NewType("Timestamp", int)
Nonce = NewType("Nonce", bytes)


def u64(value: int) -> bytes:
    return value.to_bytes(8, "big")


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class MacAddress:
    octets: bytes

    def __post_init__(self):
        if len(self.octets) != 6:
            raise ConfigurationError(f"MAC address needs 6 octets, got {len(self.octets)}")

    @classmethod
    def parse(cls, text: str) -> MacAddress:
        parts = text.strip().split(":")
        try:
            if len(parts) != 6 or any(len(p) != 2 for p in parts):
                raise ValueError(text)
            return cls(bytes(int(p, 16) for p in parts))
        except ValueError:
            raise ConfigurationError(f"malformed MAC address: {text!r}") from None

    def __str__(self) -> str:
        return ":".join(f"{b:02x}" for b in self.octets)


@dataclass(frozen=True, slots=True)
class Digest:
    value: bytes

    @property
    def width_k(self) -> int:
        return len(self.value) * 8

    def hex(self) -> str:
        return self.value.hex()

    def short(self) -> str:
        return self.value.hex()[:12]

    @classmethod
    def from_hex(cls, text: str) -> Digest:
        return cls(bytes.fromhex(text))

    @classmethod
    def zero(cls, width_k: int) -> Digest:
        check_width(width_k)
        return cls(bytes(width_k // 8))

    def __str__(self) -> str:
        return self.hex()


@dataclass(frozen=True, slots=True)
class VulnerabilityMeta:
    vul_id: str
    vendor: str
    device_class: str
    severity: int
    reported_at: int

    def __post_init__(self):
        if not self.vul_id:
            raise ConfigurationError("vul_id must be non-empty")
        if not 0 <= self.severity <= 10:
            raise ConfigurationError(f"severity {self.severity} outside 0-10")

    def to_bytes(self) -> bytes:
        return canonical_encode(
            [
                self.vul_id.encode(),
                self.vendor.encode(),
                self.device_class.encode(),
                bytes([self.severity]),
                u64(self.reported_at),
            ]
        )


# ---------------------------------------------------------------------------
# Encoding and hashing
# ---------------------------------------------------------------------------


def canonical_encode(fields: Sequence[bytes]) -> bytes:
    """Length-prefix every field so distinct field lists never collide."""
    parts = [len(fields).to_bytes(4, "big")]
    for field in fields:
        parts.append(len(field).to_bytes(4, "big"))
        parts.append(field)
    return b"".join(parts)


def check_width(width_k: int) -> int:
    if width_k not in SUPPORTED_WIDTHS:
        raise ConfigurationError(
            f"unsupported digest width {width_k}; expected one of {SUPPORTED_WIDTHS}"
        )
    return width_k


def digest(data: bytes, width_k: int) -> Digest:
    if width_k == 256:
        return Digest(hashlib.sha256(data).digest())
    if width_k == 512:
        return Digest(hashlib.sha512(data).digest())
    if width_k == 1024:
        # Two domain-separated halves; one logical H(.) call.
        return Digest(
            hashlib.sha512(b"\x00" + data).digest() + hashlib.sha512(b"\x01" + data).digest()
        )
    raise ConfigurationError(
        f"unsupported digest width {width_k}; expected one of {SUPPORTED_WIDTHS}"
    )


class HashMeter:
    """Counts protocol hash invocations (token generation, rotation, derivation, verification).

    Ledger hashing is not metered.
    """

    LABELS = ("generate", "rotate", "derive", "verify")

    def __init__(self):
        self.counts: Counter[str] = Counter()

    def record(self, label: str) -> None:
        self.counts[label] += 1

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def snapshot(self) -> dict[str, int]:
        return {label: self.counts[label] for label in self.LABELS}

    def reset(self) -> None:
        self.counts.clear()


def metered_digest(data: bytes, width_k: int, meter: HashMeter | None, label: str) -> Digest:
    if meter is not None:
        meter.record(label)
    return digest(data, width_k)


# ---------------------------------------------------------------------------
# Run-scoped state: randomness and the logical clock
# ---------------------------------------------------------------------------


class SimulationRandom:
    """Seeded generator owned by one run; the whole stream is a function of the seed."""

    def __init__(self, seed: int):
        self._seed = seed
        self._rng = random.Random(seed)

    @property
    def seed(self) -> int:
        return self._seed

    def random(self) -> float:
        return self._rng.random()

    def randbytes(self, n: int) -> bytes:
        return self._rng.getrandbits(n * 8).to_bytes(n, "big") if n else b""

    def randrange(self, n: int) -> int:
        return self._rng.randrange(n)

    def choice(self, seq):
        return self._rng.choice(seq)

    def shuffle(self, seq: list) -> None:
        self._rng.shuffle(seq)

    def sample(self, population, k: int) -> list:
        return self._rng.sample(population, k)

    def fork(self, label: str) -> SimulationRandom:
        """Child generator whose stream does not depend on how much of this one was consumed."""
        seed_bytes = hashlib.sha256(canonical_encode([u64(self._seed), label.encode()])).digest()
        return SimulationRandom(int.from_bytes(seed_bytes[:8], "big"))


def random_nonce(rng: SimulationRandom) -> Nonce:
    return Nonce(rng.randbytes(NONCE_SIZE))


def random_mac(rng: SimulationRandom) -> MacAddress:
    octets = bytearray(rng.randbytes(6))
    # locally administered, unicast
    octets[0] = (octets[0] | 0x02) & 0xFE
    return MacAddress(bytes(octets))


class LogicalClock:
    def __init__(self, start: int = CLOCK_START_MS):
        self._now = start

    def now(self) -> Timestamp:
        return Timestamp(self._now)

    def advance(self, ms: int = 1) -> Timestamp:
        if ms < 0:
            raise ConfigurationError("the logical clock never moves backwards")
        self._now += ms
        return Timestamp(self._now)


class SystemClock(LogicalClock):
    """Wall-clock milliseconds, clamped so readings never decrease."""

    def __init__(self):
        super().__init__(time.time_ns() // 1_000_000)

    def now(self) -> Timestamp:
        self._now = max(self._now, time.time_ns() // 1_000_000)
        return Timestamp(self._now)
