"""Synthetic scenario generation with a controllable initial hotspot count.

Flights get random consecutive-sector itineraries; sector capacities are then
lowered from the no-hotspot level until the zero-delay hotspot count lands in
the requested band. Every emitted scenario is validated and checked to be
solvable by a greedy repair pass, so that a zero-hotspot assignment exists
within the flights' delay budgets.
"""

from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .model import (
    ConfigurationInterval,
    DelayAssignment,
    FlightPlan,
    Scenario,
    Sector,
    SectorCrossing,
    resolve_crossings,
    validate_scenario,
    zero_delays,
)
from .traffic import compute_demand, detect_hotspots


class GenerationError(ValueError):
    """Generation could not satisfy the requested parameters."""


@dataclass(frozen=True)
class GeneratorParams:
    n_flights: int
    n_sectors: int
    target_hotspots: int
    hotspot_tolerance: int = 2
    max_delay_range: Tuple[int, int] = (6, 10)
    horizon: int = 480
    period_duration: int = 60
    period_step: int = 30
    crossing_duration_range: Tuple[int, int] = (15, 40)
    max_crossings_per_flight: int = 2
    aircraft_classes: Tuple[str, ...] = ("light", "medium", "heavy")
    nonregulatable_fraction: float = 0.0
    min_capacity: int = 1
    ensure_feasible: bool = True
    max_attempts: int = 40


def generate_scenario(params: GeneratorParams, seed: int) -> Scenario:
    """Deterministic in (params, seed); raises GenerationError when the
    hotspot target or feasibility cannot be met within the attempt budget.
    """
    failures: List[str] = []
    for attempt in range(params.max_attempts):
        rng = random.Random(seed * 1000003 + attempt)
        scenario, problem = _attempt(params, rng)
        if scenario is None:
            failures.append(f"attempt {attempt}: {problem}")
            continue
        report = validate_scenario(scenario)
        if not report.ok:
            failures.append(f"attempt {attempt}: invalid scenario {report.violations}")
            continue
        return scenario
    raise GenerationError(
        f"no scenario for target {params.target_hotspots}+-{params.hotspot_tolerance} "
        f"hotspots after {params.max_attempts} attempts: " + "; ".join(failures[-3:])
    )


def _attempt(params: GeneratorParams, rng: random.Random):
    if params.n_flights <= 0 or params.n_sectors <= 0:
        return None, "flight and sector counts must be positive"
    if params.horizon < params.period_duration:
        return None, "horizon shorter than one counting period"
    sector_ids = [f"S{k+1}" for k in range(params.n_sectors)]
    lo_d, hi_d = params.crossing_duration_range
    lo_m, hi_m = params.max_delay_range
    width = len(str(params.n_flights))
    flights = []
    for idx in range(params.n_flights):
        max_delay = rng.randint(lo_m, hi_m)
        n_cross = rng.randint(1, params.max_crossings_per_flight)
        first = rng.randrange(params.n_sectors)
        durations = [rng.randint(lo_d, hi_d) for _ in range(n_cross)]
        total = sum(durations)
        latest_entry = params.horizon - total - max_delay
        if latest_entry <= 0:
            return None, "horizon too short for crossing durations plus max delay"
        t = rng.randint(0, latest_entry)
        crossings = []
        for k, dur in enumerate(durations):
            sector = sector_ids[(first + k) % params.n_sectors]
            crossings.append(SectorCrossing(sector, t, t + dur))
            t += dur
        flights.append(
            FlightPlan(
                id=f"f{idx+1:0{width}d}",
                crossings=tuple(crossings),
                max_delay=max_delay,
                aircraft_class=rng.choice(params.aircraft_classes),
                regulatable=rng.random() >= params.nonregulatable_fraction,
            )
        )

    # provisional scenario with lax capacities to measure zero-delay demand
    base = Scenario(
        sectors=tuple(Sector(s, params.n_flights) for s in sector_ids),
        timeline=(ConfigurationInterval(0, params.horizon, {s: s for s in sector_ids}),),
        flights=tuple(flights),
        horizon=params.horizon,
        period_duration=params.period_duration,
        period_step=params.period_step,
    )
    demand = compute_demand(base, zero_delays(base))
    capacities = _fit_capacities(params, demand.counts, sector_ids)
    if capacities is None:
        return None, "hotspot target unreachable with this traffic draw"
    scenario = dataclasses.replace(
        base, sectors=tuple(Sector(s, capacities[s]) for s in sector_ids)
    )
    count = len(detect_hotspots(scenario, zero_delays(scenario)))
    if abs(count - params.target_hotspots) > params.hotspot_tolerance:
        return None, f"hotspot count {count} outside target band"
    if params.ensure_feasible and greedy_repair(scenario) is None:
        return None, "greedy repair found no zero-hotspot assignment"
    return scenario, None


def _fit_capacities(
    params: GeneratorParams, counts: Dict[Tuple[str, int], int], sector_ids: List[str]
) -> Optional[Dict[str, int]]:
    """Lower per-sector capacities from the no-hotspot level towards the target."""
    by_sector: Dict[str, List[int]] = {s: [] for s in sector_ids}
    for (sector, _k), demand in counts.items():
        by_sector[sector].append(demand)
    caps = {
        s: (max(ds) if ds else params.min_capacity) for s, ds in by_sector.items()
    }

    def hotspots_at(sector: str, cap: int) -> int:
        return sum(1 for d in by_sector[sector] if d > cap)

    total = 0
    lo = params.target_hotspots - params.hotspot_tolerance
    hi = params.target_hotspots + params.hotspot_tolerance
    while total < params.target_hotspots:
        best = None  # (new total distance to target, sector, new cap, new total)
        for s in sector_ids:
            cap = caps[s]
            if cap <= params.min_capacity:
                continue
            gained = hotspots_at(s, cap - 1) - hotspots_at(s, cap)
            new_total = total + gained
            if new_total > hi:
                continue
            key = (abs(params.target_hotspots - new_total), -gained, s)
            if best is None or key < best[0]:
                best = (key, s, cap - 1, new_total)
        if best is None:
            break
        _, s, new_cap, total = best
        caps[s] = new_cap
    if lo <= total <= hi:
        return caps
    return None


def greedy_repair(scenario: Scenario, step_budget: Optional[int] = None) -> Optional[DelayAssignment]:
    """Cheap constructive solver: repeatedly delay the hotspot participant
    that is cheapest to push out of the congested window. Returns a
    zero-hotspot assignment or None; failure does not prove infeasibility.
    """
    delays = zero_delays(scenario)
    fmap = scenario.flight_map()
    if step_budget is None:
        step_budget = sum(f.max_delay for f in scenario.flights) + 1
    for _ in range(step_budget):
        hotspots = detect_hotspots(scenario, delays)
        if not hotspots:
            return delays
        h = hotspots[0]
        best = None
        for fid in sorted(h.participants):
            f = fmap[fid]
            if not f.regulatable or delays[fid] >= f.max_delay:
                continue
            headroom = f.max_delay - delays[fid]
            entries = [
                a
                for sector, a, b in resolve_crossings(f, delays[fid], scenario)
                if sector == h.sector and a < h.period.end and b > h.period.start
            ]
            if not entries:
                continue
            # minutes needed to push the flight's entry past the window end
            push = h.period.end - min(entries)
            key = (0 if push <= headroom else 1, push, fid)
            if best is None or key < best[0]:
                best = (key, fid)
        if best is None:
            return None
        delays[best[1]] += 1
    return None
