"""The trusted authority: access lists, the four-step access flow, feedback and traps.

All state changes go through one TrustedAuthority instance, one call at a time.
The public mutators hold the authority's reentrant lock, so threads sharing an
instance (the HTTP service) still see a single active token per (worker,
vulnerability) pair and a linear ledger.
"""
from __future__ import annotations

import functools
import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, TypeVar, Union

from uivtsp.core import (
    Digest,
    HashMeter,
    LogicalClock,
    MacAddress,
    SimulationRandom,
    SwId,
    Timestamp,
    check_width,
    digest,
    random_nonce,
)
from uivtsp.errors import RejectionError
from uivtsp.guard import FeedbackMessage, GuardContext
from uivtsp.ledger import (
    Chain,
    LogLeaf,
    append_block,
    latest_access_token,
    latest_trust,
    lookup_by_tracing_token,
    lookup_false_flag,
)
from uivtsp.tokens import (
    AccessToken,
    SealedDocument,
    TokenStatus,
    VulnerabilityDocument,
    check_embed_count,
    derive_tracing_token,
    embed_tracing_token,
    generate_access_token,
    rotate_access_token,
)
from uivtsp.trust import (
    Classification,
    ConspiracyState,
    Outcome,
    PenaltyMode,
    Thresholds,
    TrustState,
    apply_conspirator_rule,
    classify,
    register_outcome,
    trust_value,
)

logger = logging.getLogger(__name__)

F = TypeVar("F", bound=Callable)


def serialized(method: F) -> F:
    @functools.wraps(method)
    def locked(self, *args, **kwargs):
        with self.lock:
            return method(self, *args, **kwargs)

    return locked  # type: ignore[return-value]


@dataclass(frozen=True)
class AuthoritySettings:
    width_k: int = 256
    embed_count: int = 1
    thresholds: Thresholds = field(default_factory=Thresholds)
    penalty_mode: PenaltyMode = PenaltyMode.on_leak
    trap_window_ms: int = 5_000
    # False runs the baseline: every listed worker with a token gets the real document
    trust_gate: bool = True

    def __post_init__(self):
        check_width(self.width_k)
        check_embed_count(self.embed_count)


# ---------------------------------------------------------------------------
# Requests and decisions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class AccessList:
    vul_id: str
    allowed: frozenset[SwId] = frozenset()


@dataclass(frozen=True, slots=True)
class AccessRequest:
    sw_id: SwId
    vul_id: str
    time: Timestamp


@dataclass(frozen=True, slots=True)
class Denied:
    reason: str


@dataclass(frozen=True, slots=True)
class GrantedReal:
    sealed: SealedDocument
    guard: GuardContext


@dataclass(frozen=True, slots=True)
class GrantedFalse:
    sealed: SealedDocument
    guard: GuardContext


AccessDecision = Union[Denied, GrantedReal, GrantedFalse]


# ---------------------------------------------------------------------------
# Worker registry
# ---------------------------------------------------------------------------


@dataclass
class WorkerRecord:
    sw_id: SwId
    mac: MacAddress
    conspiracy: ConspiracyState = field(default_factory=ConspiracyState)
    removed: bool = False
    tokens: dict[str, AccessToken] = field(default_factory=dict)
    # last epoch issued per vulnerability, kept after revocation
    epochs: dict[str, int] = field(default_factory=dict)


class WorkerRegistry:
    def __init__(self):
        self._records: dict[SwId, WorkerRecord] = {}

    def register(self, sw_id: SwId, mac: MacAddress) -> WorkerRecord:
        if not sw_id:
            raise RejectionError("worker id must be non-empty")
        if sw_id in self._records:
            raise RejectionError(f"worker {sw_id!r} is already registered")
        record = WorkerRecord(sw_id=sw_id, mac=mac)
        self._records[sw_id] = record
        return record

    def get(self, sw_id: SwId) -> WorkerRecord | None:
        return self._records.get(sw_id)

    def require(self, sw_id: SwId) -> WorkerRecord:
        record = self._records.get(sw_id)
        if record is None:
            raise RejectionError(f"worker {sw_id!r} is not registered")
        return record

    def __contains__(self, sw_id: object) -> bool:
        return sw_id in self._records

    def __iter__(self) -> Iterator[WorkerRecord]:
        return iter(self._records.values())

    def __len__(self) -> int:
        return len(self._records)


# ---------------------------------------------------------------------------
# Authority
# ---------------------------------------------------------------------------


class TrustedAuthority:
    def __init__(
        self,
        settings: AuthoritySettings,
        *,
        rng: SimulationRandom,
        clock: LogicalClock,
        chain: Chain | None = None,
        meter: HashMeter | None = None,
    ):
        self.settings = settings
        self.rng = rng
        self.clock = clock
        self.chain = chain if chain is not None else Chain(width_k=settings.width_k)
        self.meter = meter if meter is not None else HashMeter()
        self.registry = WorkerRegistry()
        self._documents: dict[str, VulnerabilityDocument] = {}
        self._decoys: dict[str, VulnerabilityDocument] = {}
        self._meta_digests: dict[str, Digest] = {}
        self._access_lists: dict[str, AccessList] = {}
        self.lock = threading.RLock()

    # -- pool and vulnerabilities ---------------------------------------------

    @serialized
    def register_worker(self, sw_id: SwId, mac: MacAddress) -> WorkerRecord:
        return self.registry.register(sw_id, mac)

    @serialized
    def submit_vulnerability(self, doc: VulnerabilityDocument, submitter: SwId) -> str:
        self.registry.require(submitter)
        vul_id = doc.meta.vul_id
        if vul_id in self._documents:
            raise RejectionError(f"vulnerability {vul_id!r} was already submitted")
        now = self.clock.now()
        self._documents[vul_id] = doc
        self._meta_digests[vul_id] = digest(doc.meta.to_bytes(), self.settings.width_k)
        self._access_lists[vul_id] = AccessList(vul_id)
        append_block(
            self.chain,
            submitter,
            self.trust_state(submitter).tr,
            self._meta_digests[vul_id],
            [LogLeaf.access_request(submitter, vul_id, now)],
            now,
        )
        logger.info("Vulnerability %s submitted by %s", vul_id, submitter)
        return vul_id

    def document(self, vul_id: str) -> VulnerabilityDocument:
        try:
            return self._documents[vul_id]
        except KeyError:
            raise RejectionError(f"unknown vulnerability {vul_id!r}") from None

    def access_list(self, vul_id: str) -> AccessList:
        self.document(vul_id)
        return self._access_lists[vul_id]

    @serialized
    def set_access_list(self, vul_id: str, allowed: Iterable[SwId]) -> None:
        doc = self.document(vul_id)
        allowed = frozenset(allowed)
        for sw_id in allowed:
            self.registry.require(sw_id)
        previous = self._access_lists[vul_id].allowed
        self._access_lists[vul_id] = AccessList(vul_id, allowed)
        now = self.clock.now()

        for sw_id in sorted(previous - allowed):
            record = self.registry.require(sw_id)
            token = record.tokens.pop(vul_id, None)
            if token is not None:
                self._log_tokens(record, vul_id, [replace(token, status=TokenStatus.revoked)], now)

        for sw_id in sorted(allowed - previous):
            record = self.registry.require(sw_id)
            if record.removed or vul_id in record.tokens:
                continue
            epoch = record.epochs[vul_id] + 1 if vul_id in record.epochs else 0
            token = generate_access_token(
                sw_id,
                doc.meta,
                now,
                random_nonce(self.rng),
                self.settings.width_k,
                pool=self.registry,
                epoch=epoch,
                meter=self.meter,
            )
            record.tokens[vul_id] = token
            record.epochs[vul_id] = epoch
            self._log_tokens(record, vul_id, [token], now)

    def _log_tokens(
        self, record: WorkerRecord, vul_id: str, tokens: list[AccessToken], now: Timestamp
    ) -> None:
        append_block(
            self.chain,
            record.sw_id,
            self.trust_state(record.sw_id).tr,
            self._meta_digests[vul_id],
            [LogLeaf.access_token(t) for t in tokens],
            now,
        )

    # -- trust ----------------------------------------------------------------

    def trust_state(self, sw_id: SwId) -> TrustState:
        """Current trust, read from the ledger; removal pins it to zero."""
        stored = latest_trust(self.chain, sw_id)
        sec, lek = (stored[0], stored[1]) if stored else (0, 0)
        record = self.registry.get(sw_id)
        if record is not None and record.removed:
            return TrustState(sec, lek, 0.0)
        return TrustState(sec, lek, trust_value(sec, lek, self.settings.penalty_mode))

    def classification(self, sw_id: SwId) -> Classification:
        record = self.registry.get(sw_id)
        if record is not None and record.removed:
            return Classification.removed
        return classify(self.trust_state(sw_id).tr, self.settings.thresholds)

    # -- access flow ------------------------------------------------------------

    @serialized
    def handle_access_request(self, req: AccessRequest) -> AccessDecision:
        record = self.registry.get(req.sw_id)
        if record is None:
            logger.debug("Request from unregistered %s denied", req.sw_id)
            return Denied("unregistered")
        if req.vul_id not in self._documents:
            return Denied("unknown-vulnerability")
        if record.removed:
            return self._deny(record, req, "removed")
        if req.sw_id not in self._access_lists[req.vul_id].allowed:
            return self._deny(record, req, "not-on-list")

        token = record.tokens.get(req.vul_id)
        stored = latest_access_token(self.chain, req.sw_id, req.vul_id)
        if token is None or stored is None or stored.get("token") != token.value.hex():
            return self._deny(record, req, "no-token")

        state = self.trust_state(req.sw_id)
        is_false = False
        if self.settings.trust_gate:
            band = classify(state.tr, self.settings.thresholds)
            if band is Classification.dishonest:
                return self._deny(record, req, "untrusted")
            is_false = band is Classification.semi_honest

        return self._grant(record, req, token, state, is_false)

    def _deny(self, record: WorkerRecord, req: AccessRequest, reason: str) -> Denied:
        now = self.clock.now()
        append_block(
            self.chain,
            record.sw_id,
            self.trust_state(record.sw_id).tr,
            self._meta_digests[req.vul_id],
            [LogLeaf.access_request(req.sw_id, req.vul_id, req.time)],
            now,
        )
        logger.debug("Request %s/%s denied: %s", req.sw_id, req.vul_id, reason)
        return Denied(reason)

    def _grant(
        self,
        record: WorkerRecord,
        req: AccessRequest,
        token: AccessToken,
        state: TrustState,
        is_false: bool,
    ) -> GrantedReal | GrantedFalse:
        now = self.clock.now()
        doc = self._documents[req.vul_id]
        revoked, nxt = rotate_access_token(
            token, doc.meta, now, random_nonce(self.rng), meter=self.meter
        )
        tracing = derive_tracing_token(revoked, record.mac, meter=self.meter)
        valid_until = Timestamp(now + self.settings.trap_window_ms) if is_false else None
        sealed = embed_tracing_token(
            self._decoy(req.vul_id) if is_false else doc,
            tracing,
            self.settings.embed_count,
            is_false=is_false,
            valid_until=valid_until,
        )
        append_block(
            self.chain,
            record.sw_id,
            state.tr,
            self._meta_digests[req.vul_id],
            [
                LogLeaf.access_token(revoked),
                LogLeaf.access_token(nxt),
                LogLeaf.tracing_token(tracing),
                LogLeaf.trust_old(state.sec, state.lek),
                LogLeaf.trust_new(state.sec, state.lek),
                LogLeaf.access_request(req.sw_id, req.vul_id, req.time),
                LogLeaf.false_flag(is_false),
            ],
            now,
        )
        record.tokens[req.vul_id] = nxt
        record.epochs[req.vul_id] = nxt.epoch
        guard = GuardContext(record.sw_id, req.vul_id, revoked.value)
        if is_false:
            logger.debug("Trap released to %s for %s until %s", record.sw_id, req.vul_id, valid_until)
            return GrantedFalse(sealed, guard)
        return GrantedReal(sealed, guard)

    def _decoy(self, vul_id: str) -> VulnerabilityDocument:
        """Synthetic payload with the real document's meta and size."""
        decoy = self._decoys.get(vul_id)
        if decoy is None:
            real = self._documents[vul_id]
            decoy = VulnerabilityDocument(real.meta, self.rng.randbytes(len(real.payload)))
            self._decoys[vul_id] = decoy
        return decoy

    # -- feedback and outcomes -------------------------------------------------

    @serialized
    def process_feedback(self, fb: FeedbackMessage) -> None:
        hit = lookup_by_tracing_token(self.chain, fb.tracing_value)
        if hit is None:
            logger.warning("Ignoring feedback with unknown tracing token %s", fb.tracing_value.short())
            return
        sw_id, vul_id, _ = hit
        record = self.registry.require(sw_id)
        if not lookup_false_flag(self.chain, fb.tracing_value):
            logger.debug("Leak of %s traced to %s via %s", vul_id, sw_id, fb.mac_current)
            self._record_outcome(record, vul_id, Outcome.leaked)
            return

        conspiracy = record.conspiracy.with_mac(fb.mac_current)
        if conspiracy is record.conspiracy:
            return
        record.conspiracy = conspiracy
        new_state, band = apply_conspirator_rule(
            self.trust_state(sw_id), conspiracy, self.settings.thresholds
        )
        leaves = [LogLeaf.conspirator(fb.mac_current, conspiracy.mu)]
        if band is Classification.removed and not record.removed:
            record.removed = True
            for _, token in sorted(record.tokens.items()):
                leaves.append(LogLeaf.access_token(replace(token, status=TokenStatus.revoked)))
            record.tokens.clear()
            logger.info("Worker %s removed: %d conspirator(s) on trap %s", sw_id, conspiracy.mu, vul_id)
        now = self.clock.now()
        append_block(self.chain, sw_id, new_state.tr, self._meta_digests[vul_id], leaves, now)

    @serialized
    def register_keep(self, sw_id: SwId, vul_id: str) -> None:
        record = self.registry.require(sw_id)
        self.document(vul_id)
        if record.removed:
            return
        self._record_outcome(record, vul_id, Outcome.kept)

    def _record_outcome(self, record: WorkerRecord, vul_id: str, outcome: Outcome) -> None:
        old = self.trust_state(record.sw_id)
        new = register_outcome(old, outcome, self.settings.penalty_mode)
        tr = 0.0 if record.removed else new.tr
        append_block(
            self.chain,
            record.sw_id,
            tr,
            self._meta_digests[vul_id],
            [LogLeaf.trust_old(old.sec, old.lek), LogLeaf.trust_new(new.sec, new.lek)],
            self.clock.now(),
        )
