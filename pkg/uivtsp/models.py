from sqlalchemy import (
    BigInteger,
    Column,
    Enum,
    Float,
    ForeignKey,
    Integer,
    String,
    Text,
    UniqueConstraint,
)
from sqlalchemy.orm import relationship

from uivtsp.database import Base
from uivtsp.ledger import LeafKind


class BlockRecord(Base):
    __tablename__ = "blocks"

    id = Column(Integer, primary_key=True, index=True)
    chain_name = Column(String(64), nullable=False, index=True)
    height = Column(Integer, nullable=False)
    prev_hash = Column(String(256), nullable=False)
    timestamp = Column(BigInteger, nullable=False)
    merkle_root = Column(String(256), nullable=False)
    sw_id = Column(String(128), nullable=False, index=True)
    # stored as a double; must match the hashed head value bit for bit
    trust_value = Column(Float, nullable=False)
    vul_meta_digest = Column(String(256), nullable=False)
    head_hash = Column(String(256), nullable=False)

    leaves = relationship(
        "LeafRecord",
        back_populates="block",
        cascade="all, delete-orphan",
        order_by="LeafRecord.position",
    )

    __table_args__ = (UniqueConstraint("chain_name", "height", name="uq_block_chain_height"),)


class LeafRecord(Base):
    __tablename__ = "leaves"

    id = Column(Integer, primary_key=True, index=True)
    block_id = Column(Integer, ForeignKey("blocks.id", ondelete="CASCADE"), nullable=False)
    position = Column(Integer, nullable=False)
    kind = Column(Enum(LeafKind), nullable=False)
    # leaf fields as a JSON object
    body = Column(Text, nullable=False)

    block = relationship("BlockRecord", back_populates="leaves")

    __table_args__ = (UniqueConstraint("block_id", "position", name="uq_leaf_block_position"),)
