"""Chain construction, verification, tamper detection, queries and the JSON-Lines format."""
import json
from dataclasses import replace

import pytest

from uivtsp.authority import AccessRequest, GrantedReal
from uivtsp.core import Digest, MacAddress, SimulationRandom, SwId, Timestamp, digest, random_mac, random_nonce
from uivtsp.errors import LedgerError, LedgerFormatError
from uivtsp.ledger import (
    Block,
    Chain,
    LeafKind,
    LogLeaf,
    append_block,
    body_root,
    conspirator_path,
    dump_chain,
    latest_access_token,
    latest_trust,
    leaf_hash,
    load_chain,
    lookup_by_tracing_token,
    lookup_false_flag,
    merkle_root,
    replay_trust_states,
    verify_chain,
)
from uivtsp.trust import PenaltyMode

from tests.conftest import MAC_B

T0 = 1_700_000_000_000
META = digest(b"meta", 256)


def build_chain(n_blocks: int, width_k: int = 256) -> Chain:
    chain = Chain(width_k=width_k)
    meta = digest(b"meta", width_k)
    for i in range(n_blocks):
        sec, lek = i, i // 3
        append_block(
            chain,
            SwId(f"sw-{i % 7}"),
            (1 + sec) / (2 + sec + lek),
            meta,
            [
                LogLeaf.trust_old(sec, lek),
                LogLeaf.trust_new(sec + 1, lek),
                LogLeaf.access_request(SwId(f"sw-{i % 7}"), "uiv-0001", Timestamp(T0 + i)),
            ],
            Timestamp(T0 + i),
        )
    return chain


def test_append_links_blocks():
    chain = build_chain(3)
    assert [b.head.block_id for b in chain.blocks] == [0, 1, 2]
    assert chain.blocks[0].head.prev_hash == Digest.zero(256)
    assert chain.blocks[2].head.prev_hash == chain.blocks[1].hash
    assert verify_chain(chain)
    assert str(verify_chain(chain)) == "Valid"


def test_empty_chain_is_valid():
    assert verify_chain(Chain(width_k=512))


def test_append_rejects_empty_body():
    with pytest.raises(LedgerError):
        append_block(Chain(width_k=256), SwId("a"), 0.5, META, [], Timestamp(T0))


@pytest.mark.parametrize("trust_value", [-0.01, 1.01])
def test_append_rejects_trust_out_of_range(trust_value):
    with pytest.raises(LedgerError):
        append_block(Chain(width_k=256), SwId("a"), trust_value, META, [LogLeaf.trust_new(0, 0)], Timestamp(T0))


def test_append_rejects_decreasing_timestamp():
    chain = build_chain(2)
    with pytest.raises(LedgerError):
        append_block(chain, SwId("a"), 0.5, META, [LogLeaf.trust_new(0, 0)], Timestamp(T0 - 1))


def test_negative_trust_leaf_is_rejected():
    with pytest.raises(LedgerError):
        LogLeaf.trust_new(-1, 0)


# ---------------------------------------------------------------------------
# Merkle body
# ---------------------------------------------------------------------------


def test_merkle_single_leaf_is_its_hash():
    h = digest(b"x", 256)
    assert merkle_root([h]) == h


def test_merkle_duplicates_odd_node():
    hashes = [digest(bytes([i]), 256) for i in range(3)]
    assert merkle_root(hashes) == merkle_root(hashes + [hashes[-1]])


def test_merkle_needs_a_leaf():
    with pytest.raises(LedgerError):
        merkle_root([])


def test_body_root_depends_on_leaf_order():
    leaves = [LogLeaf.trust_old(1, 0), LogLeaf.trust_new(2, 0)]
    assert body_root(leaves, 256) != body_root(leaves[::-1], 256)
    assert leaf_hash(leaves[0], 256) != leaf_hash(LogLeaf.trust_new(1, 0), 256)


# ---------------------------------------------------------------------------
# Tamper suite
# ---------------------------------------------------------------------------


def _with_block(chain: Chain, height: int, block: Block) -> Chain:
    blocks = list(chain.blocks)
    blocks[height] = block
    return Chain(width_k=chain.width_k, blocks=blocks)


HEAD_PERTURBATIONS = {
    "block_id": lambda h: replace(h, block_id=h.block_id + 1),
    "prev_hash": lambda h: replace(h, prev_hash=digest(h.prev_hash.value, 256)),
    "timestamp": lambda h: replace(h, timestamp=h.timestamp + 1),
    "merkle_root": lambda h: replace(h, merkle_root=digest(h.merkle_root.value, 256)),
    "sw_id": lambda h: replace(h, sw_id=SwId(h.sw_id + "x")),
    "trust_value": lambda h: replace(h, trust_value=h.trust_value / 2 + 0.01),
    "vul_meta_digest": lambda h: replace(h, vul_meta_digest=digest(b"other", 256)),
}


@pytest.fixture(scope="module")
def hundred_blocks():
    return build_chain(100)


@pytest.mark.parametrize("field", sorted(HEAD_PERTURBATIONS))
def test_every_head_field_perturbation_is_detected(hundred_blocks, field):
    for height, block in enumerate(hundred_blocks.blocks):
        tampered = replace(block, head=HEAD_PERTURBATIONS[field](block.head))
        verdict = verify_chain(_with_block(hundred_blocks, height, tampered))
        assert not verdict, (field, height)
        assert verdict.height == height


def test_every_leaf_perturbation_is_detected(hundred_blocks):
    for height, block in enumerate(hundred_blocks.blocks):
        for position, leaf in enumerate(block.leaves):
            body = list(leaf.body)
            body[-1] = body[-1] + 1
            leaves = list(block.leaves)
            leaves[position] = LogLeaf(leaf.kind, tuple(body))
            tampered = replace(block, leaves=tuple(leaves))
            verdict = verify_chain(_with_block(hundred_blocks, height, tampered))
            assert verdict.reason == "merkle mismatch"
            assert verdict.height == height


def test_stored_head_hash_perturbation_is_detected(hundred_blocks):
    tip = hundred_blocks.blocks[-1]
    tampered = replace(tip, hash=digest(tip.hash.value, 256))
    verdict = verify_chain(_with_block(hundred_blocks, 99, tampered))
    assert (verdict.valid, verdict.height, verdict.reason) == (False, 99, "head hash mismatch")


def test_dropping_a_block_is_detected(hundred_blocks):
    blocks = hundred_blocks.blocks[:40] + hundred_blocks.blocks[41:]
    verdict = verify_chain(Chain(width_k=256, blocks=blocks))
    assert verdict.height == 40


# ---------------------------------------------------------------------------
# JSON Lines
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("width_k", [256, 1024])
def test_reload_reverifies_bit_exactly(tmp_path, width_k):
    chain = build_chain(100, width_k)
    path = dump_chain(chain, tmp_path / "ledger.jsonl")
    loaded = load_chain(path)
    assert loaded.width_k == width_k
    assert loaded.blocks == chain.blocks
    assert verify_chain(loaded)
    dump_chain(loaded, tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()


def test_edited_leaf_on_disk_is_invalid(tmp_path):
    path = dump_chain(build_chain(10), tmp_path / "ledger.jsonl")
    lines = path.read_text().splitlines()
    row = json.loads(lines[4])
    row["leaves"][1]["body"]["sec"] += 1
    lines[4] = json.dumps(row)
    path.write_text("\n".join(lines) + "\n")
    verdict = verify_chain(load_chain(path))
    assert (verdict.height, verdict.reason) == (4, "merkle mismatch")


def test_truncated_last_line_is_a_format_error(tmp_path):
    path = dump_chain(build_chain(5), tmp_path / "ledger.jsonl")
    text = path.read_text()
    path.write_text(text[: len(text) - 40])
    with pytest.raises(LedgerFormatError) as excinfo:
        load_chain(path)
    assert excinfo.value.line == 5


def test_unknown_leaf_kind_is_a_format_error(tmp_path):
    path = dump_chain(build_chain(2), tmp_path / "ledger.jsonl")
    path.write_text(path.read_text().replace('"kind":"trust_old"', '"kind":"bogus"', 1))
    with pytest.raises(LedgerFormatError):
        load_chain(path)


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


def test_queries_follow_the_authority_flow(authority):
    chain = authority.chain
    first = latest_access_token(chain, SwId("alice"), "uiv-0001")
    assert first.get("epoch") == 0

    decision = authority.handle_access_request(
        AccessRequest(SwId("alice"), "uiv-0001", authority.clock.now())
    )
    assert isinstance(decision, GrantedReal)
    current = latest_access_token(chain, SwId("alice"), "uiv-0001")
    assert current.get("epoch") == 1
    assert current.get("status") == "active"

    traced = decision.sealed.embedded_tokens[0]
    hit = lookup_by_tracing_token(chain, traced)
    assert (hit.sw_id, hit.vul_id) == ("alice", "uiv-0001")
    assert lookup_false_flag(chain, traced) is False
    assert lookup_by_tracing_token(chain, digest(b"forged", 256)) is None
    assert lookup_false_flag(chain, digest(b"forged", 256)) is None

    assert latest_trust(chain, SwId("alice")) == (0, 0, 0.5)
    assert latest_trust(chain, SwId("nobody")) is None


def _scan_for_tracing(chain, value_hex):
    hit = None
    for block in chain.blocks:
        for leaf in block.leaves:
            if leaf.kind is LeafKind.tracing_token and leaf.get("value") == value_hex:
                hit = (leaf.get("sw_id"), leaf.get("vul_id"), MacAddress.parse(leaf.get("bound_mac")))
    return hit


def test_tracing_lookup_matches_a_full_scan():
    rng = SimulationRandom(17)
    chain = Chain(width_k=256)
    issued = []
    for i in range(2_000):
        sw_id, vul_id = SwId(f"sw-{i % 13}"), f"uiv-{i % 5:04d}"
        leaves = [LogLeaf.access_request(sw_id, vul_id, Timestamp(T0 + i))]
        for _ in range(4):
            value = digest(random_nonce(rng), 256).hex()
            leaves.append(LogLeaf(LeafKind.tracing_token, (value, sw_id, vul_id, str(random_mac(rng)))))
            issued.append(value)
        append_block(chain, sw_id, 0.5, META, leaves, Timestamp(T0 + i))
    assert sum(len(b.leaves) for b in chain.blocks) == 10_000

    queries = rng.sample(issued, 150) + [digest(random_nonce(rng), 256).hex() for _ in range(50)]
    for value in queries:
        hit = lookup_by_tracing_token(chain, Digest.from_hex(value))
        expected = _scan_for_tracing(chain, value)
        assert (tuple(hit) if hit else None) == expected


def test_revoked_pair_has_no_active_token(authority):
    authority.set_access_list("uiv-0001", [SwId("alice")])
    assert latest_access_token(authority.chain, SwId("bob"), "uiv-0001") is None


def test_conspirator_leaves_rebuild_path_and_removal():
    chain = Chain(width_k=256)
    append_block(chain, SwId("eve"), 0.4, META, [LogLeaf.trust_new(3, 2)], Timestamp(T0))
    append_block(chain, SwId("eve"), 0.0, META, [LogLeaf.conspirator(MAC_B, 1)], Timestamp(T0 + 1))
    assert conspirator_path(chain, SwId("eve")) == [str(MAC_B)]
    replayed = replay_trust_states(chain, PenaltyMode.on_leak)
    assert replayed[SwId("eve")].removed
    assert replayed[SwId("eve")].state.tr == 0.0
    assert replayed[SwId("eve")].state.sec == 3
    assert [leaf.kind for leaf in chain.blocks[1].leaves] == [LeafKind.conspirator]
