import base64
import binascii
from typing import Annotated, Literal, Optional

from pydantic import AfterValidator, BaseModel, Field, field_validator

from uivtsp.core import MacAddress
from uivtsp.errors import ConfigurationError


def _check_mac(value: str) -> str:
    try:
        return str(MacAddress.parse(value))
    except ConfigurationError as exc:
        raise ValueError(str(exc)) from None


MacText = Annotated[str, AfterValidator(_check_mac)]


class WorkerCreate(BaseModel):
    sw_id: str = Field(min_length=1, max_length=128)
    mac: MacText


class WorkerRead(BaseModel):
    sw_id: str
    mac: str
    removed: bool


class VulnerabilityCreate(BaseModel):
    submitter: str
    vul_id: str = Field(min_length=1, max_length=64)
    vendor: str
    device_class: str
    severity: int = Field(ge=0, le=10)
    payload_b64: str

    @field_validator("payload_b64")
    @classmethod
    def _payload(cls, value: str) -> str:
        try:
            raw = base64.b64decode(value, validate=True)
        except (binascii.Error, ValueError):
            raise ValueError("payload_b64 is not valid base64") from None
        if not raw:
            raise ValueError("payload must be non-empty")
        return value


class VulnerabilityRead(BaseModel):
    vul_id: str


class AccessListUpdate(BaseModel):
    allowed: list[str]


class AccessRequestIn(BaseModel):
    sw_id: str
    vul_id: str


class AccessDecisionOut(BaseModel):
    decision: Literal["granted", "denied"]
    reason: Optional[str] = None
    document_b64: Optional[str] = None


class FeedbackIn(BaseModel):
    tracing_value: str
    vul_id: str
    sw_id: str
    mac_current: MacText
    t_feedback: int = Field(ge=0)

    @field_validator("tracing_value")
    @classmethod
    def _hex(cls, value: str) -> str:
        try:
            raw = bytes.fromhex(value)
        except ValueError:
            raise ValueError("tracing_value must be hex") from None
        if len(raw) * 8 not in (256, 512, 1024):
            raise ValueError("tracing_value has an unsupported width")
        return value.lower()


class TrustRead(BaseModel):
    sw_id: str
    sec: int
    lek: int
    tr: float
    classification: str


class ChainVerdictRead(BaseModel):
    valid: bool
    height: Optional[int] = None
    reason: Optional[str] = None
    blocks: int
