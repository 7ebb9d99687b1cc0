"""SQLAlchemy wiring for the ledger archive.

``DATABASE_URL`` picks the database for the service, ``uivtsp ledger archive``,
the import script and Alembic alike.
"""
import os
from typing import Iterator

from sqlalchemy import Engine, create_engine
from sqlalchemy.orm import DeclarativeBase, Session, sessionmaker

DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///./uivtsp.db")


def make_engine(url: str = DATABASE_URL) -> Engine:
    """Engine for ``url``; SQLite connections may cross the service's worker threads."""
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    return create_engine(url, connect_args=connect_args)


engine = make_engine()

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


class Base(DeclarativeBase):
    """Archive tables: one row per block, one per leaf."""


def init_archive(bind: Engine = engine) -> None:
    """Create the archive tables on a database no migration has touched yet."""
    import uivtsp.models  # noqa: F401

    Base.metadata.create_all(bind=bind)


def get_db() -> Iterator[Session]:
    """Request-scoped archive session."""
    with SessionLocal() as db:
        yield db
