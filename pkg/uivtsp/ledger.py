"""Private, single-writer, hash-chained block store of continuous logs.

Each block head links to the previous head hash; each body is a Merkle tree of
typed log leaves. On disk a chain is JSON Lines, one block per line::

    {"block_id":..,"prev_hash":..,"timestamp":..,"merkle_root":..,"sw_id":..,
     "trust_value":..,"vul_meta_digest":..,"leaves":[{"kind":..,"body":{..}}],
     "head_hash":..}

Digests are lowercase hex. ``head_hash`` lets the tip block be checked too.
"""
from __future__ import annotations

import enum
import json
import logging
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from uivtsp.core import Digest, MacAddress, SwId, Timestamp, VulnerabilityMeta, canonical_encode, digest, u64
from uivtsp.errors import LedgerError, LedgerFormatError
from uivtsp.tokens import AccessToken, TokenStatus, TracingToken
from uivtsp.trust import PenaltyMode, TrustState, trust_value

logger = logging.getLogger(__name__)

_DOUBLE = struct.Struct(">d")


class LeafKind(str, enum.Enum):
    access_token = "access_token"
    tracing_token = "tracing_token"
    trust_old = "trust_old"
    trust_new = "trust_new"
    access_request = "access_request"
    false_flag = "false_flag"
    conspirator = "conspirator"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]


_KIND_CODES = {kind: i for i, kind in enumerate(LeafKind, start=1)}

LEAF_FIELDS: dict[LeafKind, tuple[str, ...]] = {
    LeafKind.access_token: ("token", "sw_id", "vul_id", "epoch", "status"),
    LeafKind.tracing_token: ("value", "sw_id", "vul_id", "bound_mac"),
    LeafKind.trust_old: ("sec", "lek"),
    LeafKind.trust_new: ("sec", "lek"),
    LeafKind.access_request: ("sw_id", "vul_id", "time"),
    LeafKind.false_flag: ("is_false",),
    LeafKind.conspirator: ("mac", "mu"),
}


def _encode_value(value) -> bytes:
    if isinstance(value, bool):
        return b"\x01" if value else b"\x00"
    if isinstance(value, int):
        return u64(value)
    return str(value).encode()


@dataclass(frozen=True, slots=True)
class LogLeaf:
    kind: LeafKind
    body: tuple

    def __post_init__(self):
        if len(self.body) != len(LEAF_FIELDS[self.kind]):
            raise LedgerError(f"{self.kind.value} leaf expects fields {LEAF_FIELDS[self.kind]}")
        if self.kind in (LeafKind.trust_old, LeafKind.trust_new) and min(self.body) < 0:
            raise LedgerError("trust counts are non-negative")

    def get(self, name: str):
        return self.body[LEAF_FIELDS[self.kind].index(name)]

    def as_dict(self) -> dict:
        return dict(zip(LEAF_FIELDS[self.kind], self.body))

    def encode(self) -> bytes:
        return bytes([self.kind.code]) + canonical_encode([_encode_value(v) for v in self.body])

    # constructors -----------------------------------------------------------

    @classmethod
    def access_token(cls, token: AccessToken) -> LogLeaf:
        return cls(
            LeafKind.access_token,
            (token.value.hex(), token.sw_id, token.vul_id, token.epoch, token.status.value),
        )

    @classmethod
    def tracing_token(cls, token: TracingToken) -> LogLeaf:
        return cls(
            LeafKind.tracing_token,
            (token.value.hex(), token.sw_id, token.vul_id, str(token.bound_mac)),
        )

    @classmethod
    def trust_old(cls, sec: int, lek: int) -> LogLeaf:
        return cls(LeafKind.trust_old, (sec, lek))

    @classmethod
    def trust_new(cls, sec: int, lek: int) -> LogLeaf:
        return cls(LeafKind.trust_new, (sec, lek))

    @classmethod
    def access_request(cls, sw_id: SwId, vul_id: str, time: Timestamp) -> LogLeaf:
        return cls(LeafKind.access_request, (sw_id, vul_id, time))

    @classmethod
    def false_flag(cls, is_false: bool) -> LogLeaf:
        return cls(LeafKind.false_flag, (is_false,))

    @classmethod
    def conspirator(cls, mac: MacAddress, mu: int) -> LogLeaf:
        return cls(LeafKind.conspirator, (str(mac), mu))


@dataclass(frozen=True, slots=True)
class BlockHead:
    block_id: int
    prev_hash: Digest
    timestamp: Timestamp
    merkle_root: Digest
    sw_id: SwId
    trust_value: float
    vul_meta_digest: Digest

    def encode(self) -> bytes:
        return canonical_encode(
            [
                u64(self.block_id),
                self.prev_hash.value,
                u64(self.timestamp),
                self.merkle_root.value,
                self.sw_id.encode(),
                _DOUBLE.pack(self.trust_value),
                self.vul_meta_digest.value,
            ]
        )


def head_hash(head: BlockHead, width_k: int) -> Digest:
    return digest(head.encode(), width_k)


@dataclass(frozen=True, slots=True)
class Block:
    head: BlockHead
    leaves: tuple[LogLeaf, ...]
    hash: Digest


@dataclass(frozen=True, slots=True)
class ChainVerdict:
    valid: bool
    height: int | None = None
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.valid

    def __str__(self) -> str:
        return "Valid" if self.valid else f"Invalid({self.height}, {self.reason})"


VALID = ChainVerdict(True)


class TracingHit(NamedTuple):
    sw_id: SwId
    vul_id: str
    bound_mac: MacAddress


@dataclass
class Chain:
    """Append-only list of blocks plus the query indexes the authority reads."""

    width_k: int
    blocks: list[Block] = field(default_factory=list)
    _access: dict[tuple[str, str], LogLeaf] = field(default_factory=dict, repr=False)
    _trust: dict[str, tuple[int, LogLeaf]] = field(default_factory=dict, repr=False)
    _tracing: dict[str, tuple[int, LogLeaf]] = field(default_factory=dict, repr=False)
    _paths: dict[str, list[str]] = field(default_factory=lambda: defaultdict(list), repr=False)

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip_hash(self) -> Digest:
        return self.blocks[-1].hash if self.blocks else Digest.zero(self.width_k)

    def _push(self, block: Block) -> None:
        height = len(self.blocks)
        self.blocks.append(block)
        owner = block.head.sw_id
        for leaf in block.leaves:
            kind = leaf.kind
            if kind is LeafKind.access_token:
                self._access[(leaf.body[1], leaf.body[2])] = leaf
            elif kind is LeafKind.trust_new:
                self._trust[owner] = (height, leaf)
            elif kind is LeafKind.tracing_token:
                self._tracing[leaf.body[0]] = (height, leaf)
            elif kind is LeafKind.conspirator:
                self._paths[owner].append(leaf.body[0])


# ---------------------------------------------------------------------------
# Merkle body
# ---------------------------------------------------------------------------


def leaf_hash(leaf: LogLeaf, width_k: int) -> Digest:
    return digest(leaf.encode(), width_k)


def merkle_root(leaf_hashes: Sequence[Digest]) -> Digest:
    if not leaf_hashes:
        raise LedgerError("a Merkle tree needs at least one leaf")
    width_k = leaf_hashes[0].width_k
    level = list(leaf_hashes)
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [
            digest(canonical_encode([level[i].value, level[i + 1].value]), width_k)
            for i in range(0, len(level), 2)
        ]
    return level[0]


def body_root(leaves: Sequence[LogLeaf], width_k: int) -> Digest:
    return merkle_root([leaf_hash(leaf, width_k) for leaf in leaves])


# ---------------------------------------------------------------------------
# Writing and verification
# ---------------------------------------------------------------------------


def append_block(
    chain: Chain,
    sw_id: SwId,
    trust_value: float,
    vul_meta: VulnerabilityMeta | Digest,
    leaves: Sequence[LogLeaf],
    now: Timestamp,
) -> BlockHead:
    if not leaves:
        raise LedgerError("a block needs at least one log leaf")
    if not 0.0 <= trust_value <= 1.0:
        raise LedgerError(f"trust value {trust_value} outside [0, 1]")
    if chain.blocks and now < chain.blocks[-1].head.timestamp:
        raise LedgerError("block timestamps must not decrease")
    width_k = chain.width_k
    meta_digest = (
        vul_meta if isinstance(vul_meta, Digest) else digest(vul_meta.to_bytes(), width_k)
    )
    head = BlockHead(
        block_id=len(chain.blocks),
        prev_hash=chain.tip_hash,
        timestamp=now,
        merkle_root=body_root(leaves, width_k),
        sw_id=sw_id,
        trust_value=float(trust_value),
        vul_meta_digest=meta_digest,
    )
    chain._push(Block(head=head, leaves=tuple(leaves), hash=head_hash(head, width_k)))
    return head


def verify_chain(chain: Chain) -> ChainVerdict:
    width_k = chain.width_k
    expected_prev = Digest.zero(width_k)
    for height, block in enumerate(chain.blocks):
        head = block.head
        if head.block_id != height:
            return ChainVerdict(False, height, "height mismatch")
        if not block.leaves:
            return ChainVerdict(False, height, "empty body")
        if body_root(block.leaves, width_k) != head.merkle_root:
            return ChainVerdict(False, height, "merkle mismatch")
        if head.prev_hash != expected_prev:
            return ChainVerdict(False, height, "link mismatch")
        recomputed = head_hash(head, width_k)
        if recomputed != block.hash:
            return ChainVerdict(False, height, "head hash mismatch")
        expected_prev = recomputed
    return VALID


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


def latest_access_token(chain: Chain, sw_id: SwId, vul_id: str) -> LogLeaf | None:
    """Newest token leaf for the pair, if it is still active."""
    leaf = chain._access.get((sw_id, vul_id))
    if leaf is None or leaf.get("status") != TokenStatus.active.value:
        return None
    return leaf


def latest_trust(chain: Chain, sw_id: SwId) -> tuple[int, int, float] | None:
    hit = chain._trust.get(sw_id)
    if hit is None:
        return None
    height, leaf = hit
    return leaf.body[0], leaf.body[1], chain.blocks[height].head.trust_value


def lookup_by_tracing_token(chain: Chain, tracing_value: Digest) -> TracingHit | None:
    hit = chain._tracing.get(tracing_value.hex())
    if hit is None:
        return None
    _, leaf = hit
    return TracingHit(SwId(leaf.body[1]), leaf.body[2], MacAddress.parse(leaf.body[3]))


def lookup_false_flag(chain: Chain, tracing_value: Digest) -> bool | None:
    """F_false recorded in the block that stored the tracing token."""
    hit = chain._tracing.get(tracing_value.hex())
    if hit is None:
        return None
    for leaf in chain.blocks[hit[0]].leaves:
        if leaf.kind is LeafKind.false_flag:
            return leaf.body[0]
    return False


def conspirator_path(chain: Chain, sw_id: SwId) -> list[str]:
    return list(chain._paths.get(sw_id, ()))


@dataclass(frozen=True, slots=True)
class ReplayedTrust:
    state: TrustState
    removed: bool
    path: tuple[str, ...]


def replay_trust_states(chain: Chain, mode: PenaltyMode) -> dict[SwId, ReplayedTrust]:
    """Rebuild every worker's trust state from leaves alone, oldest block first."""
    counts: dict[str, tuple[int, int]] = {}
    paths: dict[str, list[str]] = defaultdict(list)
    for block in chain.blocks:
        owner = block.head.sw_id
        for leaf in block.leaves:
            if leaf.kind is LeafKind.trust_new:
                counts[owner] = (leaf.body[0], leaf.body[1])
            elif leaf.kind is LeafKind.conspirator:
                paths[owner].append(leaf.body[0])
                counts.setdefault(owner, (0, 0))
    replayed = {}
    for sw_id, (sec, lek) in counts.items():
        removed = bool(paths.get(sw_id))
        tr = 0.0 if removed else trust_value(sec, lek, mode)
        replayed[SwId(sw_id)] = ReplayedTrust(
            state=TrustState(sec=sec, lek=lek, tr=tr),
            removed=removed,
            path=tuple(paths.get(sw_id, ())),
        )
    return replayed


# ---------------------------------------------------------------------------
# JSON Lines
# ---------------------------------------------------------------------------


def block_to_json(block: Block) -> dict:
    head = block.head
    return {
        "block_id": head.block_id,
        "prev_hash": head.prev_hash.hex(),
        "timestamp": head.timestamp,
        "merkle_root": head.merkle_root.hex(),
        "sw_id": head.sw_id,
        "trust_value": head.trust_value,
        "vul_meta_digest": head.vul_meta_digest.hex(),
        "leaves": [{"kind": leaf.kind.value, "body": leaf.as_dict()} for leaf in block.leaves],
        "head_hash": block.hash.hex(),
    }


def block_from_json(row: dict) -> Block:
    leaves = []
    for item in row["leaves"]:
        kind = LeafKind(item["kind"])
        body = item["body"]
        leaves.append(LogLeaf(kind, tuple(body[name] for name in LEAF_FIELDS[kind])))
    head = BlockHead(
        block_id=int(row["block_id"]),
        prev_hash=Digest.from_hex(row["prev_hash"]),
        timestamp=Timestamp(int(row["timestamp"])),
        merkle_root=Digest.from_hex(row["merkle_root"]),
        sw_id=SwId(row["sw_id"]),
        trust_value=float(row["trust_value"]),
        vul_meta_digest=Digest.from_hex(row["vul_meta_digest"]),
    )
    return Block(head=head, leaves=tuple(leaves), hash=Digest.from_hex(row["head_hash"]))


def dumps_block(block: Block) -> str:
    return json.dumps(block_to_json(block), separators=(",", ":"))


def dump_chain(chain: Chain, path: Path | str) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for block in chain.blocks:
            fh.write(dumps_block(block))
            fh.write("\n")
    logger.info("Wrote %d blocks to %s", len(chain.blocks), path)
    return path


def chain_from_blocks(blocks: Iterable[Block], width_k: int) -> Chain:
    chain = Chain(width_k=width_k)
    for block in blocks:
        chain._push(block)
    return chain


def load_chain(path: Path | str, width_k: int | None = None) -> Chain:
    """Parse a JSON-Lines chain. The result is not verified; call verify_chain."""
    blocks = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                blocks.append(block_from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError, LedgerError) as exc:
                raise LedgerFormatError(str(exc) or type(exc).__name__, line=lineno) from exc
    if width_k is None:
        width_k = blocks[0].head.prev_hash.width_k if blocks else 256
    return chain_from_blocks(blocks, width_k)
