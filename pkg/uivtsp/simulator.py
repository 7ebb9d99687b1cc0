"""Cycle-based multi-agent experiments comparing the trust-gated scheme with the baseline."""
from __future__ import annotations

import enum
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from uivtsp.authority import (
    AccessRequest,
    AuthoritySettings,
    Denied,
    GrantedFalse,
    GrantedReal,
    TrustedAuthority,
)
from uivtsp.core import (
    HashMeter,
    LogicalClock,
    MacAddress,
    SimulationRandom,
    SwId,
    Timestamp,
    VulnerabilityMeta,
    canonical_encode,
    digest,
    random_mac,
)
from uivtsp.errors import ConfigurationError, SimulationError
from uivtsp.guard import (
    Destroyed,
    FalseDocObserved,
    FeedbackMessage,
    GuardContext,
    HostEnvironment,
    Lurk,
    enforce,
    simulate_exfiltration,
)
from uivtsp.ledger import lookup_by_tracing_token
from uivtsp.tokens import SealedDocument, VulnerabilityDocument, tracing_preimage
from uivtsp.trust import Classification, PenaltyMode, Thresholds

logger = logging.getLogger(__name__)

DEVICE_CLASSES = ("plc", "rtu", "hmi", "gateway", "sensor")


class Scheme(str, enum.Enum):
    uiv_tsp = "uiv-tsp"
    uiv_sp = "uiv-sp"


class Archetype(str, enum.Enum):
    honest = "honest"
    semi_honest = "semi-honest"
    dishonest = "dishonest"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _check_thresholds(triple) -> None:
    try:
        Thresholds(*triple)
    except ConfigurationError as exc:
        raise ValueError(str(exc)) from None


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", use_enum_values=False)

    n_workers: int = Field(2000, ge=1)
    pct_dishonest: float = Field(0.3, ge=0.0, le=1.0)
    pct_semihonest: float = Field(0.1, ge=0.0, le=1.0)
    thresholds: tuple[float, float, float] = (0.2, 0.5, 0.8)
    cycles: int = Field(200, ge=1)
    embed_count: int = Field(1, ge=1, le=4)
    width_k: Literal[256, 512, 1024] = 256
    p_leak_dishonest: float = Field(0.3, ge=0.0, le=1.0)
    p_leak_semihonest: float = Field(0.1, ge=0.0, le=1.0)
    trap_window_cycles: int = Field(5, ge=1)
    penalty_mode: PenaltyMode = PenaltyMode.on_leak
    scheme: Scheme = Scheme.uiv_tsp
    seed: int = Field(0, ge=0)
    n_vulnerabilities: int = Field(1, ge=1)
    payload_size: int = Field(512, ge=1)
    cycle_ms: int = Field(60_000, ge=1)
    threshold_sweep: tuple[tuple[float, float, float], ...] = ()

    @field_validator("thresholds")
    @classmethod
    def _ordered_thresholds(cls, value):
        _check_thresholds(value)
        return value

    @field_validator("threshold_sweep")
    @classmethod
    def _ordered_sweep(cls, value):
        for triple in value:
            _check_thresholds(triple)
        return value

    @model_validator(mode="after")
    def _population_fits(self):
        if self.pct_dishonest + self.pct_semihonest > 1.0 + 1e-12:
            raise ValueError("pct_dishonest + pct_semihonest must not exceed 1")
        return self

    @property
    def threshold_values(self) -> Thresholds:
        return Thresholds(*self.thresholds)

    def authority_settings(self) -> AuthoritySettings:
        baseline = self.scheme is Scheme.uiv_sp
        return AuthoritySettings(
            width_k=self.width_k,
            embed_count=self.embed_count,
            thresholds=self.threshold_values,
            penalty_mode=PenaltyMode.off if baseline else self.penalty_mode,
            trap_window_ms=self.trap_window_cycles * self.cycle_ms,
            trust_gate=not baseline,
        )


def load_config(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except (ValidationError, ConfigurationError) as exc:
        raise ConfigurationError(str(exc)) from exc


def cell_seed(base_seed: int, *axis_values) -> int:
    """Per-cell seed; depends only on the base seed and the cell's own axis values."""
    encoded = canonical_encode([str(v).encode() for v in (base_seed, *axis_values)])
    return int.from_bytes(digest(encoded, 256).value[:8], "big") >> 1


# ---------------------------------------------------------------------------
# Agents and metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class BehaviorProfile:
    archetype: Archetype
    leak_probability: float

    def __post_init__(self):
        if self.archetype is Archetype.honest and self.leak_probability != 0:
            raise ConfigurationError("honest agents never leak")


@dataclass(frozen=True, slots=True)
class Agent:
    sw_id: SwId
    profile: BehaviorProfile
    mac: MacAddress


@dataclass
class CycleMetrics:
    cycle: int
    requests: int = 0
    leaks_attempted: int = 0
    leaks_succeeded: int = 0
    leaks_destroyed: int = 0
    grants_real: int = 0
    grants_false: int = 0
    denials: int = 0
    flagged_dishonest: int = 0
    flagged_honest: int = 0
    hash_invocations: int = 0
    trap_leaks: int = 0
    licensed_destructions: int = 0


CYCLE_COLUMNS = (
    "cycle",
    "leaks_attempted",
    "leaks_succeeded",
    "leaks_destroyed",
    "grants_real",
    "grants_false",
    "denials",
    "flagged_dishonest",
    "flagged_honest",
    "hash_invocations",
)


@dataclass
class MetricsSeries:
    config: ScenarioConfig
    cycles: list[CycleMetrics] = field(default_factory=list)
    detection_rate: float | None = None
    false_alarm_rate: float | None = None
    leakage_probability: float | None = None
    avg_tracing_delay_us: float | None = None
    trust_trajectories: dict[str, list[float]] = field(default_factory=dict)
    first_leak_cycle: dict[str, int] = field(default_factory=dict)

    def column(self, name: str) -> list[int]:
        return [getattr(c, name) for c in self.cycles]

    def total(self, name: str) -> int:
        return sum(self.column(name))


def compute_detection_rates(
    population: Iterable[tuple[Archetype, Classification]],
) -> tuple[float | None, float | None]:
    """(detection rate over dishonest agents, false-alarm rate over honest agents)."""
    dishonest = flagged_dishonest = honest = flagged_honest = 0
    for archetype, band in population:
        if archetype is Archetype.dishonest:
            dishonest += 1
            flagged_dishonest += band.flagged
        elif archetype is Archetype.honest:
            honest += 1
            flagged_honest += band.flagged
    detection = flagged_dishonest / dishonest if dishonest else None
    false_alarm = flagged_honest / honest if honest else None
    return detection, false_alarm


def compute_leakage_probability(series: MetricsSeries) -> float | None:
    grants = series.total("grants_real")
    if grants == 0:
        return None
    return series.total("leaks_succeeded") / grants


def quartile_means(values: Sequence[float]) -> tuple[float, float]:
    """Mean of the first and of the last quarter of a per-cycle series."""
    arr = np.asarray(values, dtype=float)
    quarter = max(1, len(arr) // 4)
    return float(arr[:quarter].mean()), float(arr[-quarter:].mean())


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass
class _LiveCopy:
    sealed: SealedDocument
    guard: GuardContext
    mac: MacAddress


class Simulation:
    """One deterministic run: population, authority, and the cycle loop."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        root = SimulationRandom(cfg.seed)
        self._behavior = root.fork("behavior")
        self._attackers = root.fork("attackers")
        self._order = root.fork("order")
        self.clock = LogicalClock()
        self.meter = HashMeter()
        self.authority = TrustedAuthority(
            cfg.authority_settings(), rng=root.fork("authority"), clock=self.clock, meter=self.meter
        )
        self.agents = self._populate(root.fork("population"), root.fork("hosts"))
        self._by_id = {agent.sw_id: agent for agent in self.agents}
        self.vul_ids = self._publish(root.fork("documents"))
        self.live_copies: list[_LiveCopy] = []
        self.trap_store: dict[SwId, tuple[SealedDocument, GuardContext]] = {}
        self.real_store: dict[tuple[SwId, str], SealedDocument] = {}
        self._guards: dict[tuple[SwId, str], GuardContext] = {}
        self._feedback_queue: list[FeedbackMessage] = []
        self._delays_ms: list[int] = []

    def _populate(self, population_rng: SimulationRandom, host_rng: SimulationRandom) -> list[Agent]:
        cfg = self.cfg
        n_dishonest = round(cfg.n_workers * cfg.pct_dishonest)
        n_semi = min(round(cfg.n_workers * cfg.pct_semihonest), cfg.n_workers - n_dishonest)
        archetypes = (
            [Archetype.dishonest] * n_dishonest
            + [Archetype.semi_honest] * n_semi
            + [Archetype.honest] * (cfg.n_workers - n_dishonest - n_semi)
        )
        population_rng.shuffle(archetypes)
        leak_probability = {
            Archetype.honest: 0.0,
            Archetype.semi_honest: cfg.p_leak_semihonest,
            Archetype.dishonest: cfg.p_leak_dishonest,
        }
        width = len(str(cfg.n_workers))
        agents, macs = [], set()
        for i, archetype in enumerate(archetypes, start=1):
            mac = random_mac(host_rng)
            while mac in macs:
                mac = random_mac(host_rng)
            macs.add(mac)
            agent = Agent(
                sw_id=SwId(f"sw-{i:0{width}d}"),
                profile=BehaviorProfile(archetype, leak_probability[archetype]),
                mac=mac,
            )
            self.authority.register_worker(agent.sw_id, agent.mac)
            agents.append(agent)
        self._host_macs = macs
        return agents

    def _publish(self, doc_rng: SimulationRandom) -> list[str]:
        submitter = self.agents[0].sw_id
        everyone = [agent.sw_id for agent in self.agents]
        vul_ids = []
        for j in range(1, self.cfg.n_vulnerabilities + 1):
            meta = VulnerabilityMeta(
                vul_id=f"uiv-{j:04d}",
                vendor=f"vendor-{doc_rng.randrange(50):02d}",
                device_class=doc_rng.choice(DEVICE_CLASSES),
                severity=1 + doc_rng.randrange(10),
                reported_at=self.clock.now(),
            )
            doc = VulnerabilityDocument(meta, doc_rng.randbytes(self.cfg.payload_size))
            vul_ids.append(self.authority.submit_vulnerability(doc, submitter))
            self.authority.set_access_list(meta.vul_id, everyone)
        return vul_ids

    def _attacker_mac(self) -> MacAddress:
        mac = random_mac(self._attackers)
        while mac in self._host_macs:
            mac = random_mac(self._attackers)
        return mac

    def _exfiltrate(self, agent: Agent, sealed: SealedDocument, guard: GuardContext):
        now = self.clock.advance(1)
        source = HostEnvironment(agent.mac, now)
        target = HostEnvironment(self._attacker_mac(), now)
        return simulate_exfiltration(sealed, source, target, guard, meter=self.meter)

    def run(self) -> MetricsSeries:
        cfg = self.cfg
        logger.info(
            "Running %s: %d workers, %.0f%% dishonest, %d cycles, seed %d",
            cfg.scheme.value,
            cfg.n_workers,
            cfg.pct_dishonest * 100,
            cfg.cycles,
            cfg.seed,
        )
        series = MetricsSeries(config=cfg)
        for agent in self.agents:
            if agent.profile.archetype is Archetype.dishonest:
                series.trust_trajectories[agent.sw_id] = []
        for cycle in range(cfg.cycles):
            series.cycles.append(self.run_cycle(cycle, series))

        population = [
            (agent.profile.archetype, self.authority.classification(agent.sw_id))
            for agent in self.agents
        ]
        series.detection_rate, series.false_alarm_rate = compute_detection_rates(population)
        series.leakage_probability = compute_leakage_probability(series)
        if self._delays_ms:
            series.avg_tracing_delay_us = float(np.mean(self._delays_ms)) * 1000
        logger.info(
            "Finished %s seed %d: detection=%s false_alarm=%s leakage=%s",
            cfg.scheme.value,
            cfg.seed,
            _fmt(series.detection_rate),
            _fmt(series.false_alarm_rate),
            _fmt(series.leakage_probability),
        )
        return series

    def run_cycle(self, cycle: int, series: MetricsSeries) -> CycleMetrics:
        cfg = self.cfg
        authority = self.authority
        metrics = CycleMetrics(cycle)
        cycle_start = self.clock.now()
        hashes_before = self.meter.total
        keepers: list[tuple[SwId, str]] = []

        order = list(self.agents)
        self._order.shuffle(order)
        for agent in order:
            record = authority.registry.get(agent.sw_id)
            if record.removed:
                continue
            vul_id = self.vul_ids[self._behavior.randrange(len(self.vul_ids))]
            now = self.clock.advance(1)
            metrics.requests += 1
            decision = authority.handle_access_request(AccessRequest(agent.sw_id, vul_id, now))
            leaks = self._behavior.random() < agent.profile.leak_probability

            if isinstance(decision, Denied):
                metrics.denials += 1
            elif isinstance(decision, GrantedReal):
                metrics.grants_real += 1
                if not leaks:
                    self.real_store[(agent.sw_id, vul_id)] = decision.sealed
                    self._guards[(agent.sw_id, vul_id)] = decision.guard
                    keepers.append((agent.sw_id, vul_id))
                    continue
                metrics.leaks_attempted += 1
                verdict = self._exfiltrate(agent, decision.sealed, decision.guard).verdict
                if isinstance(verdict, Destroyed):
                    metrics.leaks_destroyed += 1
                    self._feedback_queue.append(verdict.feedback)
                    series.first_leak_cycle.setdefault(agent.sw_id, cycle)
                if cfg.scheme is Scheme.uiv_sp or not isinstance(verdict, Destroyed):
                    metrics.leaks_succeeded += 1
            elif isinstance(decision, GrantedFalse):
                metrics.grants_false += 1
                self.trap_store[agent.sw_id] = (decision.sealed, decision.guard)
                if not leaks:
                    continue
                metrics.trap_leaks += 1
                copy, verdict = self._exfiltrate(agent, decision.sealed, decision.guard)
                if isinstance(verdict, FalseDocObserved):
                    self._feedback_queue.append(verdict.feedback)
                    self.live_copies.append(_LiveCopy(copy, decision.guard, verdict.feedback.mac_current))

        end = max(self.clock.now(), Timestamp(cycle_start + cfg.cycle_ms))
        self.clock.advance(end - self.clock.now())
        self._deliver_feedback()
        for sw_id, vul_id in keepers:
            self._check_licensed(sw_id, vul_id, metrics)
            authority.register_keep(sw_id, vul_id)
        self._expire_traps()

        metrics.hash_invocations = self.meter.total - hashes_before
        for agent in self.agents:
            band = authority.classification(agent.sw_id)
            if agent.profile.archetype is Archetype.dishonest:
                metrics.flagged_dishonest += band.flagged
                series.trust_trajectories.setdefault(agent.sw_id, []).append(authority.trust_state(agent.sw_id).tr)
            elif agent.profile.archetype is Archetype.honest:
                metrics.flagged_honest += band.flagged
        return metrics

    def _check_licensed(self, sw_id: SwId, vul_id: str, metrics: CycleMetrics) -> None:
        """A kept copy on its own host must keep lurking."""
        sealed = self.real_store[(sw_id, vul_id)]
        guard = self._guards[(sw_id, vul_id)]
        env = HostEnvironment(self._by_id[sw_id].mac, self.clock.now())
        verdict = enforce(sealed, guard.revoked_token_value, env, guard, meter=self.meter)
        if not isinstance(verdict, Lurk):
            metrics.licensed_destructions += 1
            logger.error("Licensed copy of %s on %s was not kept: %s", vul_id, sw_id, verdict)

    def _deliver_feedback(self) -> None:
        """Feedback reaches the authority at the cycle boundary, in emission order."""
        now = self.clock.now()
        for fb in self._feedback_queue:
            self.authority.process_feedback(fb)
            self._delays_ms.append(now - fb.t_feedback)
        self._feedback_queue.clear()

    def _expire_traps(self) -> None:
        now = self.clock.now()
        survivors = []
        for live in self.live_copies:
            env = HostEnvironment(live.mac, now)
            verdict = enforce(
                live.sealed, live.guard.revoked_token_value, env, live.guard, meter=self.meter
            )
            if isinstance(verdict, FalseDocObserved):
                self.authority.process_feedback(verdict.feedback)
                survivors.append(live)
        self.live_copies = survivors
        self.trap_store = {
            sw_id: held
            for sw_id, held in self.trap_store.items()
            if held[0].valid_until is not None and held[0].valid_until >= now
        }


def run_scenario(cfg: ScenarioConfig) -> MetricsSeries:
    return Simulation(cfg).run()


def run_grid(configs: Sequence[ScenarioConfig], jobs: int = 1) -> list[MetricsSeries]:
    """Independent scenarios, optionally in worker processes; results keep input order."""
    if jobs <= 1 or len(configs) <= 1:
        return [run_scenario(cfg) for cfg in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_scenario, configs))


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.3f}"


# ---------------------------------------------------------------------------
# Tracing delay
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class DelayCell:
    width_k: int
    embed_count: int
    rounds: int
    mean_delay_us: float
    median_delay_us: float
    hash_invocations_per_round: int
    trace_bytes_per_round: int


def _trace_round_cost(sealed: SealedDocument, guard: GuardContext) -> int:
    """Bytes parsed, compared across copies, and hashed by one guard check."""
    copy_size = sealed.width_k // 8
    return (
        len(sealed.to_bytes())
        + (sealed.embed_count - 1) * copy_size
        + len(tracing_preimage(guard.revoked_token_value, MacAddress(bytes(6))))
    )


def measure_tracing_delay(
    widths: Sequence[int] = (256, 512, 1024),
    embed_counts: Sequence[int] = (1, 2, 3, 4),
    rounds: int = 200,
    seed: int = 0,
    payload_size: int = 512,
) -> list[DelayCell]:
    """Wall-clock time from an off-host arrival to naming the licensed worker.

    Each round grants one real document, moves it to a fresh host, lets the
    guard destroy it and resolves the feedback with one ledger lookup.
    """
    cells = []
    for width_k in widths:
        for embed_count in embed_counts:
            cells.append(_delay_cell(width_k, embed_count, rounds, seed, payload_size))
            logger.info(
                "Tracing delay k=%d eps=%d: %.2f us median",
                width_k,
                embed_count,
                cells[-1].median_delay_us,
            )
    return cells


def _delay_cell(width_k: int, embed_count: int, rounds: int, seed: int, payload_size: int) -> DelayCell:
    rng = SimulationRandom(cell_seed(seed, width_k, embed_count))
    clock = LogicalClock()
    meter = HashMeter()
    authority = TrustedAuthority(
        AuthoritySettings(width_k=width_k, embed_count=embed_count, trust_gate=False),
        rng=rng.fork("authority"),
        clock=clock,
        meter=meter,
    )
    worker = SwId("sw-bench")
    worker_mac = random_mac(rng)
    authority.register_worker(worker, worker_mac)
    meta = VulnerabilityMeta("uiv-bench", "vendor", "plc", 7, clock.now())
    authority.submit_vulnerability(VulnerabilityDocument(meta, rng.randbytes(payload_size)), worker)
    authority.set_access_list(meta.vul_id, [worker])

    delays_ns, hashes = [], []
    cost = 0
    for _ in range(rounds + 10):
        now = clock.advance(1)
        before = meter.total
        decision = authority.handle_access_request(AccessRequest(worker, meta.vul_id, now))
        if not isinstance(decision, GrantedReal):
            raise SimulationError(f"benchmark worker {worker} was not granted the document: {decision}")
        target = HostEnvironment(random_mac(rng), now)

        started = time.perf_counter_ns()
        verdict = enforce(
            decision.sealed, decision.guard.revoked_token_value, target, decision.guard, meter=meter
        )
        hit = (
            lookup_by_tracing_token(authority.chain, verdict.feedback.tracing_value)
            if isinstance(verdict, Destroyed)
            else None
        )
        elapsed = time.perf_counter_ns() - started

        if hit is None or hit.sw_id != worker:
            raise SimulationError(f"trace round failed to identify {worker}: {verdict}")
        delays_ns.append(elapsed)
        hashes.append(meter.total - before)
        cost = _trace_round_cost(decision.sealed, decision.guard)

    # first rounds warm caches
    delays_ns, hashes = delays_ns[10:], hashes[10:]
    per_round = hashes[0] if len(set(hashes)) == 1 else -1
    return DelayCell(
        width_k=width_k,
        embed_count=embed_count,
        rounds=rounds,
        mean_delay_us=float(np.mean(delays_ns)) / 1000,
        median_delay_us=float(np.median(delays_ns)) / 1000,
        hash_invocations_per_round=per_round,
        trace_bytes_per_round=cost,
    )
