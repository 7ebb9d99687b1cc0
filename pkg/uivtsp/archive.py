"""Relational archive of ledger chains.

The JSON-Lines file stays authoritative; the archive mirrors it block by
block so a chain can be queried with SQL and reloaded for verification.
"""
from __future__ import annotations

import json
import logging

from sqlalchemy import func, select
from sqlalchemy.orm import Session

from uivtsp.errors import LedgerError
from uivtsp.ledger import Block, Chain, block_from_json, block_to_json, chain_from_blocks
from uivtsp.models import BlockRecord, LeafRecord

logger = logging.getLogger(__name__)


def stored_height(db: Session, name: str) -> int:
    """Number of blocks archived under ``name``."""
    top = db.scalar(select(func.max(BlockRecord.height)).where(BlockRecord.chain_name == name))
    return 0 if top is None else top + 1


def _record(block: Block, name: str) -> BlockRecord:
    row = block_to_json(block)
    record = BlockRecord(
        chain_name=name,
        height=row["block_id"],
        prev_hash=row["prev_hash"],
        timestamp=row["timestamp"],
        merkle_root=row["merkle_root"],
        sw_id=row["sw_id"],
        trust_value=row["trust_value"],
        vul_meta_digest=row["vul_meta_digest"],
        head_hash=row["head_hash"],
    )
    for position, (leaf, item) in enumerate(zip(block.leaves, row["leaves"])):
        record.leaves.append(
            LeafRecord(position=position, kind=leaf.kind, body=json.dumps(item["body"], sort_keys=True))
        )
    return record


def save_chain(db: Session, chain: Chain, name: str = "default") -> int:
    """Append the blocks above the archived height; returns how many were written."""
    height = stored_height(db, name)
    if height > len(chain):
        raise LedgerError(f"archive {name!r} holds {height} blocks, chain only {len(chain)}")
    if height:
        tip = db.scalar(
            select(BlockRecord.head_hash).where(
                BlockRecord.chain_name == name, BlockRecord.height == height - 1
            )
        )
        if tip != chain.blocks[height - 1].hash.hex():
            raise LedgerError(f"archive {name!r} diverges from the chain at height {height - 1}")

    fresh = chain.blocks[height:]
    for block in fresh:
        db.add(_record(block, name))
    db.commit()
    logger.info("Archived %d block(s) of %r (height %d)", len(fresh), name, len(chain))
    return len(fresh)


def load_archived_chain(db: Session, name: str = "default", width_k: int | None = None) -> Chain:
    records = db.scalars(
        select(BlockRecord).where(BlockRecord.chain_name == name).order_by(BlockRecord.height)
    ).all()
    blocks = []
    for record in records:
        blocks.append(
            block_from_json(
                {
                    "block_id": record.height,
                    "prev_hash": record.prev_hash,
                    "timestamp": record.timestamp,
                    "merkle_root": record.merkle_root,
                    "sw_id": record.sw_id,
                    "trust_value": record.trust_value,
                    "vul_meta_digest": record.vul_meta_digest,
                    "head_hash": record.head_hash,
                    "leaves": [
                        {"kind": leaf.kind.value, "body": json.loads(leaf.body)}
                        for leaf in record.leaves
                    ],
                }
            )
        )
    if width_k is None:
        width_k = blocks[0].head.prev_hash.width_k if blocks else 256
    return chain_from_blocks(blocks, width_k)
