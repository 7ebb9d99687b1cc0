"""ledger archive

Revision ID: 7c1e2a9b5f30
Revises:
Create Date: 2026-10-18 09:12:40.118204

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa


revision: str = '7c1e2a9b5f30'
down_revision: Union[str, None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None

LEAF_KINDS = (
    'access_token',
    'tracing_token',
    'trust_old',
    'trust_new',
    'access_request',
    'false_flag',
    'conspirator',
)


def upgrade() -> None:
    op.create_table('blocks',
    sa.Column('id', sa.Integer(), nullable=False),
    sa.Column('chain_name', sa.String(length=64), nullable=False),
    sa.Column('height', sa.Integer(), nullable=False),
    sa.Column('prev_hash', sa.String(length=256), nullable=False),
    sa.Column('timestamp', sa.BigInteger(), nullable=False),
    sa.Column('merkle_root', sa.String(length=256), nullable=False),
    sa.Column('sw_id', sa.String(length=128), nullable=False),
    sa.Column('trust_value', sa.Float(), nullable=False),
    sa.Column('vul_meta_digest', sa.String(length=256), nullable=False),
    sa.Column('head_hash', sa.String(length=256), nullable=False),
    sa.PrimaryKeyConstraint('id'),
    sa.UniqueConstraint('chain_name', 'height', name='uq_block_chain_height')
    )
    op.create_index(op.f('ix_blocks_id'), 'blocks', ['id'], unique=False)
    op.create_index(op.f('ix_blocks_chain_name'), 'blocks', ['chain_name'], unique=False)
    op.create_index(op.f('ix_blocks_sw_id'), 'blocks', ['sw_id'], unique=False)
    op.create_table('leaves',
    sa.Column('id', sa.Integer(), nullable=False),
    sa.Column('block_id', sa.Integer(), nullable=False),
    sa.Column('position', sa.Integer(), nullable=False),
    sa.Column('kind', sa.Enum(*LEAF_KINDS, name='leafkind'), nullable=False),
    sa.Column('body', sa.Text(), nullable=False),
    sa.ForeignKeyConstraint(['block_id'], ['blocks.id'], ondelete='CASCADE'),
    sa.PrimaryKeyConstraint('id'),
    sa.UniqueConstraint('block_id', 'position', name='uq_leaf_block_position')
    )
    op.create_index(op.f('ix_leaves_id'), 'leaves', ['id'], unique=False)


def downgrade() -> None:
    op.drop_index(op.f('ix_leaves_id'), table_name='leaves')
    op.drop_table('leaves')
    op.drop_index(op.f('ix_blocks_sw_id'), table_name='blocks')
    op.drop_index(op.f('ix_blocks_chain_name'), table_name='blocks')
    op.drop_index(op.f('ix_blocks_id'), table_name='blocks')
    op.drop_table('blocks')
