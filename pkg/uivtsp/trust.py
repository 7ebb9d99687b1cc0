"""Beta-reputation trust with a leak penalty, threshold classification and the conspirator rule."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from uivtsp.core import MacAddress
from uivtsp.errors import ConfigurationError, PreconditionError


class PenaltyMode(str, enum.Enum):
    literal = "literal"
    on_leak = "on-leak"
    # plain beta reputation, used by the baseline without a trust mechanism
    off = "off"


class Classification(str, enum.Enum):
    honest = "honest"
    monitored = "monitored"
    semi_honest = "semi-honest"
    dishonest = "dishonest"
    removed = "removed"

    @property
    def flagged(self) -> bool:
        return self in (Classification.dishonest, Classification.removed)


class Outcome(str, enum.Enum):
    kept = "kept"
    leaked = "leaked"


@dataclass(frozen=True, slots=True)
class Thresholds:
    delta_l: float = 0.2
    delta_m: float = 0.5
    delta_h: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.delta_l < self.delta_m < self.delta_h < 1.0:
            raise ConfigurationError(
                f"thresholds must satisfy 0 < l < m < h < 1, got {self.as_tuple()}"
            )

    @classmethod
    def parse(cls, text: str) -> Thresholds:
        try:
            low, mid, high = (float(part) for part in text.split(","))
        except ValueError:
            raise ConfigurationError(f"expected 'l,m,h' thresholds, got {text!r}") from None
        return cls(low, mid, high)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.delta_l, self.delta_m, self.delta_h)

    def __str__(self) -> str:
        return ",".join(f"{v:g}" for v in self.as_tuple())


@dataclass(frozen=True, slots=True)
class TrustState:
    sec: int = 0
    lek: int = 0
    tr: float = 0.5

    @classmethod
    def initial(cls, mode: PenaltyMode = PenaltyMode.on_leak) -> TrustState:
        return cls(0, 0, trust_value(0, 0, mode))


@dataclass(frozen=True, slots=True)
class ConspiracyState:
    """Distinct foreign MACs seen leaking a worker's trap documents; origin excluded."""

    path: tuple[MacAddress, ...] = ()

    @property
    def mu(self) -> int:
        return len(self.path)

    def with_mac(self, mac: MacAddress) -> ConspiracyState:
        if mac in self.path:
            return self
        return ConspiracyState(self.path + (mac,))


def _check_counts(sec: int, lek: int) -> None:
    if sec < 0 or lek < 0:
        raise PreconditionError(f"trust counts must be non-negative, got sec={sec} lek={lek}")


def base_trust(sec: int, lek: int) -> float:
    _check_counts(sec, lek)
    return (1 + sec) / (2 + sec + lek)


def penalty(sec: int, lek: int, mode: PenaltyMode = PenaltyMode.on_leak) -> float:
    _check_counts(sec, lek)
    if mode is PenaltyMode.off:
        return 1.0
    if mode is PenaltyMode.on_leak and lek == 0:
        return 1.0
    if sec == 0:
        # limits of exp(-(sec+lek)/sec) as sec -> 0
        return 1.0 if lek == 0 else 0.0
    return math.exp(-(sec + lek) / sec)


def trust_value(sec: int, lek: int, mode: PenaltyMode = PenaltyMode.on_leak) -> float:
    return base_trust(sec, lek) * penalty(sec, lek, mode)


def classify(tr: float, thresholds: Thresholds) -> Classification:
    if tr >= thresholds.delta_h:
        return Classification.honest
    if tr < thresholds.delta_l:
        return Classification.dishonest
    if tr < thresholds.delta_m:
        return Classification.semi_honest
    return Classification.monitored


def register_outcome(
    state: TrustState, outcome: Outcome, mode: PenaltyMode = PenaltyMode.on_leak
) -> TrustState:
    if outcome is Outcome.kept:
        sec, lek = state.sec + 1, state.lek
    else:
        sec, lek = state.sec, state.lek + 1
    return TrustState(sec=sec, lek=lek, tr=trust_value(sec, lek, mode))


def apply_conspirator_rule(
    state: TrustState,
    conspiracy: ConspiracyState,
    thresholds: Thresholds = Thresholds(),
) -> tuple[TrustState, Classification]:
    """Any conspirator zeroes trust and removes the worker for the rest of the run.

    Without conspirators the worker keeps its state and ordinary band.
    """
    if conspiracy.mu == 0:
        return state, classify(state.tr, thresholds)
    return replace(state, tr=0.0), Classification.removed
