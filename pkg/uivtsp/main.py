import base64
import logging
import os
import threading
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Response
from sqlalchemy.orm import Session

from uivtsp.archive import save_chain
from uivtsp.authority import (
    AccessRequest,
    AuthoritySettings,
    Denied,
    TrustedAuthority,
)
from uivtsp.core import Digest, MacAddress, SimulationRandom, SwId, SystemClock, Timestamp, VulnerabilityMeta
from uivtsp.database import get_db
from uivtsp.errors import ConfigurationError, PreconditionError, RejectionError, TokenStateError
from uivtsp.guard import FeedbackMessage
from uivtsp.ledger import block_to_json, verify_chain
from uivtsp.schemas import (
    AccessDecisionOut,
    AccessListUpdate,
    AccessRequestIn,
    ChainVerdictRead,
    FeedbackIn,
    TrustRead,
    VulnerabilityCreate,
    VulnerabilityRead,
    WorkerCreate,
    WorkerRead,
)
from uivtsp.tokens import VulnerabilityDocument
from uivtsp.trust import PenaltyMode

logger = logging.getLogger(__name__)

ARCHIVE_NAME = os.getenv("UIVTSP_ARCHIVE_NAME", "service")

app = FastAPI(title="UIV-TSP", description="Trusted authority for undisclosed IIoT vulnerability sharing")


def settings_from_env() -> AuthoritySettings:
    try:
        return AuthoritySettings(
            width_k=int(os.getenv("UIVTSP_WIDTH_K", "256")),
            embed_count=int(os.getenv("UIVTSP_EMBED_COUNT", "1")),
            penalty_mode=PenaltyMode(os.getenv("UIVTSP_PENALTY", PenaltyMode.on_leak.value)),
            trap_window_ms=int(os.getenv("UIVTSP_TRAP_WINDOW_MS", "300000")),
        )
    except ValueError as exc:
        raise ConfigurationError(f"bad authority environment: {exc}") from None


_authority: Optional[TrustedAuthority] = None
_authority_init = threading.Lock()


def get_authority() -> TrustedAuthority:
    global _authority
    with _authority_init:
        if _authority is None:
            seed = int(os.getenv("UIVTSP_SEED", "0"))
            _authority = TrustedAuthority(
                settings_from_env(), rng=SimulationRandom(seed), clock=SystemClock()
            )
            logger.info("Authority started: k=%d eps=%d", _authority.settings.width_k, _authority.settings.embed_count)
    return _authority


def _archive(db: Session, authority: TrustedAuthority) -> None:
    # caller holds authority.lock, so archive heights follow chain order
    save_chain(db, authority.chain, ARCHIVE_NAME)


# ---------------------------------------------------------------------------
# Core routes
# ---------------------------------------------------------------------------


@app.get("/health")
def health_check():
    return {"status": "ok"}


# ---------------------------------------------------------------------------
# Pool and vulnerabilities
# ---------------------------------------------------------------------------


@app.post("/workers", response_model=WorkerRead, status_code=201)
def register_worker(payload: WorkerCreate, authority: TrustedAuthority = Depends(get_authority)):
    try:
        record = authority.register_worker(SwId(payload.sw_id), MacAddress.parse(payload.mac))
    except RejectionError as exc:
        raise HTTPException(status_code=409, detail=str(exc))
    return WorkerRead(sw_id=record.sw_id, mac=str(record.mac), removed=record.removed)


@app.post("/vulnerabilities", response_model=VulnerabilityRead, status_code=201)
def submit_vulnerability(
    payload: VulnerabilityCreate,
    authority: TrustedAuthority = Depends(get_authority),
    db: Session = Depends(get_db),
):
    with authority.lock:
        if payload.submitter not in authority.registry:
            raise HTTPException(status_code=404, detail="Submitter not registered")
        meta = VulnerabilityMeta(
            vul_id=payload.vul_id,
            vendor=payload.vendor,
            device_class=payload.device_class,
            severity=payload.severity,
            reported_at=authority.clock.now(),
        )
        doc = VulnerabilityDocument(meta, base64.b64decode(payload.payload_b64))
        try:
            vul_id = authority.submit_vulnerability(doc, SwId(payload.submitter))
        except RejectionError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        _archive(db, authority)
    return VulnerabilityRead(vul_id=vul_id)


@app.put("/vulnerabilities/{vul_id}/access-list", status_code=204)
def set_access_list(
    vul_id: str,
    payload: AccessListUpdate,
    authority: TrustedAuthority = Depends(get_authority),
    db: Session = Depends(get_db),
):
    with authority.lock:
        try:
            authority.set_access_list(vul_id, [SwId(s) for s in payload.allowed])
        except RejectionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except TokenStateError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        _archive(db, authority)
    return Response(status_code=204)


# ---------------------------------------------------------------------------
# Access flow
# ---------------------------------------------------------------------------


@app.post("/access-requests", response_model=AccessDecisionOut)
def request_access(
    payload: AccessRequestIn,
    authority: TrustedAuthority = Depends(get_authority),
    db: Session = Depends(get_db),
):
    with authority.lock:
        req = AccessRequest(SwId(payload.sw_id), payload.vul_id, authority.clock.now())
        try:
            decision = authority.handle_access_request(req)
        except TokenStateError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        _archive(db, authority)
    if isinstance(decision, Denied):
        return AccessDecisionOut(decision="denied", reason=decision.reason)
    # trap and real grants are indistinguishable to the caller
    document = base64.b64encode(decision.sealed.to_bytes()).decode()
    return AccessDecisionOut(decision="granted", document_b64=document)


@app.post("/feedback", status_code=202)
def submit_feedback(
    payload: FeedbackIn,
    authority: TrustedAuthority = Depends(get_authority),
    db: Session = Depends(get_db),
):
    fb = FeedbackMessage(
        tracing_value=Digest.from_hex(payload.tracing_value),
        vul_id=payload.vul_id,
        sw_id=SwId(payload.sw_id),
        mac_current=MacAddress.parse(payload.mac_current),
        t_feedback=Timestamp(payload.t_feedback),
    )
    with authority.lock:
        try:
            authority.process_feedback(fb)
        except (ConfigurationError, PreconditionError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        _archive(db, authority)
    return {"status": "accepted"}


@app.post("/workers/{sw_id}/keeps/{vul_id}", status_code=202)
def register_keep(
    sw_id: str,
    vul_id: str,
    authority: TrustedAuthority = Depends(get_authority),
    db: Session = Depends(get_db),
):
    with authority.lock:
        try:
            authority.register_keep(SwId(sw_id), vul_id)
        except RejectionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        _archive(db, authority)
    return {"status": "accepted"}


@app.get("/workers/{sw_id}/trust", response_model=TrustRead)
def worker_trust(sw_id: str, authority: TrustedAuthority = Depends(get_authority)):
    with authority.lock:
        if sw_id not in authority.registry:
            raise HTTPException(status_code=404, detail="Worker not found")
        state = authority.trust_state(SwId(sw_id))
        band = authority.classification(SwId(sw_id))
    return TrustRead(sw_id=sw_id, sec=state.sec, lek=state.lek, tr=state.tr, classification=band.value)


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------


@app.get("/ledger/verify", response_model=ChainVerdictRead)
def ledger_verify(authority: TrustedAuthority = Depends(get_authority)):
    with authority.lock:
        verdict = verify_chain(authority.chain)
        blocks = len(authority.chain)
    return ChainVerdictRead(valid=verdict.valid, height=verdict.height, reason=verdict.reason, blocks=blocks)


@app.get("/ledger/blocks/{height}")
def ledger_block(height: int, authority: TrustedAuthority = Depends(get_authority)):
    with authority.lock:
        if not 0 <= height < len(authority.chain):
            raise HTTPException(status_code=404, detail="Block not found")
        return block_to_json(authority.chain.blocks[height])
