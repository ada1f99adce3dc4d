"""Delay reward: congestion cost, strategic delay cost, and the two
reward-quality estimators (factoredness and learnability).

An agent participating in congestion pays ``hotspot_rate`` per congested
minute; an agent clear of congestion earns ``positive_reward``. Either way it
pays ``lambda_weight`` times the class-dependent strategic cost of its own
ground delay.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from itertools import islice
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

from .model import DelayAssignment, Scenario
from .traffic import congested_duration, detect_hotspots


class EstimatorError(ValueError):
    """An estimator was given no usable samples."""


@dataclass(frozen=True)
class RewardParams:
    lambda_weight: float = 20.0
    positive_reward: float = 60.0
    hotspot_rate: float = 81.0  # Euros per congested minute

    def __post_init__(self):
        if self.lambda_weight < 0:
            raise ValueError("lambda_weight must be non-negative")
        if self.positive_reward <= 0:
            raise ValueError("positive_reward must be positive")
        if self.hotspot_rate <= 0:
            raise ValueError("hotspot_rate must be positive")


class StrategicCostTable:
    """Piecewise-linear cost-per-minute curves keyed by aircraft class.

    Each class maps to segments ``(up_to_min, rate_per_min)`` sorted by
    threshold; the final segment uses ``None`` as an open upper bound.
    """

    def __init__(self, rates: Dict[str, List[Tuple[Optional[int], float]]]):
        self.rates: Dict[str, List[Tuple[Optional[int], float]]] = {}
        for cls, segments in rates.items():
            if not segments:
                raise ValueError(f"class {cls}: empty cost curve")
            cleaned = []
            prev = 0
            for up_to, rate in segments:
                if rate < 0:
                    raise ValueError(f"class {cls}: negative rate {rate}")
                if up_to is not None:
                    if up_to <= prev:
                        raise ValueError(f"class {cls}: non-increasing thresholds")
                    prev = up_to
                cleaned.append((up_to, float(rate)))
            if cleaned[-1][0] is not None:
                raise ValueError(f"class {cls}: last segment must be unbounded")
            self.rates[cls] = cleaned

    def classes(self) -> List[str]:
        return sorted(self.rates)

    def cost(self, aircraft_class: str, delay: int) -> float:
        if delay < 0:
            raise ValueError("delay must be non-negative")
        try:
            segments = self.rates[aircraft_class]
        except KeyError:
            raise KeyError(f"unknown aircraft class {aircraft_class!r}") from None
        total = 0.0
        prev = 0
        for up_to, rate in segments:
            hi = delay if up_to is None else min(delay, up_to)
            if hi > prev:
                total += (hi - prev) * rate
            if up_to is None or delay <= up_to:
                break
            prev = up_to
        return total

    @classmethod
    def from_dict(cls, doc: dict) -> "StrategicCostTable":
        rates = {
            name: [(seg["up_to_min"], seg["rate_per_min"]) for seg in segments]
            for name, segments in doc.items()
        }
        return cls(rates)

    def to_dict(self) -> dict:
        return {
            name: [{"up_to_min": up_to, "rate_per_min": rate} for up_to, rate in segments]
            for name, segments in self.rates.items()
        }


def load_cost_table(path) -> StrategicCostTable:
    with open(path) as fh:
        return StrategicCostTable.from_dict(json.load(fh))


def default_cost_table() -> StrategicCostTable:
    doc = json.loads(
        resources.files("dcb_marl").joinpath("data/default_cost_table.json").read_text()
    )
    return StrategicCostTable.from_dict(doc)


def hotspot_cost(tdc: float, params: RewardParams) -> float:
    """Congestion component: -tdc * rate when congested, else the positive bonus."""
    if tdc < 0:
        raise ValueError("tdc must be non-negative")
    if tdc > 0:
        return -tdc * params.hotspot_rate
    return params.positive_reward


def delay_cost(delay: int, aircraft_class: str, table: StrategicCostTable) -> float:
    return table.cost(aircraft_class, delay)


def local_reward(
    delay: int,
    tdc: float,
    aircraft_class: str,
    params: RewardParams,
    table: StrategicCostTable,
) -> float:
    return hotspot_cost(tdc, params) - params.lambda_weight * delay_cost(
        delay, aircraft_class, table
    )


def flight_reward(
    scenario: Scenario,
    flight_id: str,
    delays: DelayAssignment,
    params: RewardParams,
    table: StrategicCostTable,
) -> float:
    """Local reward of one flight under a joint delay assignment."""
    tdc = congested_duration(flight_id, scenario, delays)
    cls = scenario.flight_map()[flight_id].aircraft_class
    return local_reward(delays.get(flight_id, 0), tdc, cls, params, table)


def assignment_rewards(
    scenario: Scenario,
    delays: DelayAssignment,
    params: RewardParams,
    table: StrategicCostTable,
) -> Dict[str, float]:
    """Per-flight local rewards under a joint assignment (one hotspot pass)."""
    hotspots = detect_hotspots(scenario, delays)
    from .traffic import _presence_by_sector, _union_measure  # shared internals

    presence = _presence_by_sector(scenario, delays)
    clipped: Dict[str, List[Tuple[int, int]]] = {f.id: [] for f in scenario.flights}
    for h in hotspots:
        for fid in h.participants:
            for a, b in presence[fid].get(h.sector, ()):
                lo, hi = max(a, h.period.start), min(b, h.period.end)
                if lo < hi:
                    clipped[fid].append((lo, hi))
    out = {}
    for f in scenario.flights:
        tdc = _union_measure(clipped[f.id])
        out[f.id] = local_reward(delays.get(f.id, 0), tdc, f.aircraft_class, params, table)
    return out


def global_reward(
    scenario: Scenario,
    delays: DelayAssignment,
    params: RewardParams,
    table: StrategicCostTable,
) -> float:
    """Sum of all agents' local rewards; 0 for an empty agent set."""
    return sum(assignment_rewards(scenario, delays, params, table).values())


def _check_pair(
    scenario: Scenario, flight_id: str, s: DelayAssignment, s_alt: DelayAssignment
) -> None:
    for f in scenario.flights:
        if f.id != flight_id and s.get(f.id, 0) != s_alt.get(f.id, 0):
            raise ValueError(
                f"sampled pair differs in flight {f.id}, not only in {flight_id}"
            )


def estimate_factoredness(
    scenario: Scenario,
    flight_id: str,
    sampler: Iterable[Tuple[DelayAssignment, DelayAssignment]],
    n_samples: int,
    params: RewardParams,
    table: StrategicCostTable,
) -> float:
    """Fraction of sampled own-delay perturbations where the sign of the
    agent's reward change matches the sign of the global reward change.

    Pairs must differ only in ``flight_id``'s delay. A pair contributes 1
    only when the product of the two differences is strictly positive.
    """
    if n_samples <= 0:
        raise EstimatorError("factoredness needs at least one sample")
    agreeing = 0
    taken = 0
    for s, s_alt in islice(iter(sampler), n_samples):
        _check_pair(scenario, flight_id, s, s_alt)
        r = assignment_rewards(scenario, s, params, table)
        r_alt = assignment_rewards(scenario, s_alt, params, table)
        d_local = r[flight_id] - r_alt[flight_id]
        d_global = sum(r.values()) - sum(r_alt.values())
        if d_local * d_global > 0:
            agreeing += 1
        taken += 1
    if taken == 0:
        raise EstimatorError("sampler yielded no pairs")
    return agreeing / taken


@dataclass
class LearnabilityEstimate:
    value: float
    samples_used: int
    samples_excluded: int  # zero-denominator samples carry no information


def estimate_learnability(
    scenario: Scenario,
    flight_id: str,
    state: DelayAssignment,
    sampler: Iterable[DelayAssignment],
    n_samples: int,
    params: RewardParams,
    table: StrategicCostTable,
) -> LearnabilityEstimate:
    """Mean ratio of the agent's reward sensitivity to its own delay change
    versus to the other agents' delay changes, over sampled alternatives.
    """
    if n_samples <= 0:
        raise EstimatorError("learnability needs at least one sample")
    base = flight_reward(scenario, flight_id, state, params, table)
    ratios: List[float] = []
    excluded = 0
    for s_alt in islice(iter(sampler), n_samples):
        own_swapped = dict(state)
        own_swapped[flight_id] = s_alt.get(flight_id, 0)
        others_swapped = dict(s_alt)
        others_swapped[flight_id] = state.get(flight_id, 0)
        num = abs(base - flight_reward(scenario, flight_id, own_swapped, params, table))
        den = abs(base - flight_reward(scenario, flight_id, others_swapped, params, table))
        if den == 0:
            excluded += 1
            continue
        ratios.append(num / den)
    if not ratios:
        raise EstimatorError("all learnability samples had zero denominator")
    return LearnabilityEstimate(
        value=math.fsum(ratios) / len(ratios),
        samples_used=len(ratios),
        samples_excluded=excluded,
    )
