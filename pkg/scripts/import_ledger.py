#!/usr/bin/env python3
"""Import a JSON-Lines ledger into the relational archive.

Run from project root:
    python scripts/import_ledger.py results/uiv-tsp/ledger.jsonl --name run-7

The chain is verified before anything is written. Re-running with a longer
copy of the same chain only appends the new blocks.
"""

import argparse
import sys
from pathlib import Path

# Allow running from project root without installing the package
sys.path.insert(0, str(Path(__file__).parent.parent))

from uivtsp.archive import load_archived_chain, save_chain
from uivtsp.database import SessionLocal, init_archive
from uivtsp.ledger import load_chain, verify_chain


def import_ledger(path: Path, name: str) -> int:
    chain = load_chain(path)
    verdict = verify_chain(chain)
    if not verdict:
        print(f"{path}: {verdict}; nothing imported.")
        return 1

    init_archive()
    with SessionLocal() as session:
        written = save_chain(session, chain, name)
        reloaded = load_archived_chain(session, name, chain.width_k)
    print(f"Imported {written} new block(s); archive {name!r} holds {len(reloaded)}: {verify_chain(reloaded)}")
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("path", type=Path)
    parser.add_argument("--name", default="default")
    args = parser.parse_args()
    sys.exit(import_ledger(args.path, args.name))
