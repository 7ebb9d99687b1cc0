"""Alembic environment for the ledger archive (``blocks`` and ``leaves``)."""
from logging.config import fileConfig

from sqlalchemy import engine_from_config, pool

from alembic import context

import uivtsp.models  # noqa: F401
from uivtsp.database import DATABASE_URL, Base

config = context.config
# same database as the service and `uivtsp ledger archive`
config.set_main_option("sqlalchemy.url", DATABASE_URL)

if config.config_file_name is not None:
    fileConfig(config.config_file_name)

target_metadata = Base.metadata

# SQLite cannot ALTER most columns in place
ARCHIVE_OPTIONS = dict(target_metadata=target_metadata, render_as_batch=True, compare_type=True)


def run_migrations_offline() -> None:
    context.configure(
        url=config.get_main_option("sqlalchemy.url"),
        literal_binds=True,
        dialect_opts={"paramstyle": "named"},
        **ARCHIVE_OPTIONS,
    )
    with context.begin_transaction():
        context.run_migrations()


def run_migrations_online() -> None:
    archive_engine = engine_from_config(
        config.get_section(config.config_ini_section, {}),
        prefix="sqlalchemy.",
        poolclass=pool.NullPool,
    )
    with archive_engine.connect() as connection:
        context.configure(connection=connection, **ARCHIVE_OPTIONS)
        with context.begin_transaction():
            context.run_migrations()


if context.is_offline_mode():
    run_migrations_offline()
else:
    run_migrations_online()
