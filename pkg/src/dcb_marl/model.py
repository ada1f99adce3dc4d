"""Airspace and flight-plan data model for pre-tactical ground-delay assignment.

Times are integer minutes from scenario start. Flight plans reference
elementary sectors; the configuration timeline maps elementary sectors onto
the open sectors that are active during each interval. A flat airspace is
expressed with a single identity-mapping interval.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Tuple


class OutOfHorizonError(ValueError):
    """A delayed crossing would extend past the scenario horizon."""


@dataclass(frozen=True)
class Sector:
    """An open (active) airspace sector with an entry-count capacity."""

    id: str
    capacity: int


@dataclass(frozen=True)
class SectorCrossing:
    """Presence of a flight in one elementary sector, as [entry, exit) minutes."""

    sector: str
    entry: int
    exit: int


@dataclass(frozen=True)
class ConfigurationInterval:
    """Active sectorization on [start, end): elementary id -> open sector id."""

    start: int
    end: int
    mapping: Dict[str, str]


@dataclass(frozen=True)
class FlightPlan:
    id: str
    crossings: Tuple[SectorCrossing, ...]
    max_delay: int
    aircraft_class: str = "medium"
    regulatable: bool = True


@dataclass(frozen=True)
class Scenario:
    sectors: Tuple[Sector, ...]
    timeline: Tuple[ConfigurationInterval, ...]
    flights: Tuple[FlightPlan, ...]
    horizon: int
    period_duration: int = 60
    period_step: int = 30

    def sector_map(self) -> Dict[str, Sector]:
        return {s.id: s for s in self.sectors}

    def flight_map(self) -> Dict[str, FlightPlan]:
        return {f.id: f for f in self.flights}

    def capacity(self, open_sector_id: str) -> int:
        return self.sector_map()[open_sector_id].capacity


# A solution: minutes of ground delay per flight id.
DelayAssignment = Dict[str, int]


def zero_delays(scenario: Scenario) -> DelayAssignment:
    return {f.id: 0 for f in scenario.flights}


def check_assignment(scenario: Scenario, delays: DelayAssignment) -> None:
    """Raise ValueError unless ``delays`` is feasible for the scenario."""
    for f in scenario.flights:
        d = delays.get(f.id, 0)
        if d < 0 or d > f.max_delay:
            raise ValueError(f"delay {d} out of [0, {f.max_delay}] for flight {f.id}")
        if not f.regulatable and d != 0:
            raise ValueError(f"non-regulatable flight {f.id} has delay {d}")


@dataclass
class ValidationReport:
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)


def validate_scenario(scenario: Scenario) -> ValidationReport:
    """Check every structural invariant; empty report iff well-formed."""
    report = ValidationReport()

    sector_ids = [s.id for s in scenario.sectors]
    if len(set(sector_ids)) != len(sector_ids):
        report.add("duplicate sector ids")
    for s in scenario.sectors:
        if s.capacity < 0:
            report.add(f"sector {s.id}: negative capacity {s.capacity}")
    known = set(sector_ids)

    if scenario.horizon <= 0:
        report.add(f"non-positive horizon {scenario.horizon}")
    if scenario.period_duration <= 0 or scenario.period_step <= 0:
        report.add("non-positive counting period duration or step")
    elif scenario.period_step > scenario.period_duration:
        report.add("period_step exceeds period_duration")

    timeline = sorted(scenario.timeline, key=lambda iv: iv.start)
    cursor = 0
    for iv in timeline:
        if iv.start >= iv.end:
            report.add(f"timeline interval [{iv.start},{iv.end}) is empty or inverted")
            continue
        if iv.start > cursor:
            report.add(f"timeline gap [{cursor},{iv.start})")
        elif iv.start < cursor:
            report.add(f"timeline overlap at {iv.start}")
        cursor = max(cursor, iv.end)
        for elem, open_id in iv.mapping.items():
            if open_id not in known:
                report.add(f"interval [{iv.start},{iv.end}): dangling open sector {open_id}")
    if timeline and cursor < scenario.horizon:
        report.add(f"timeline gap [{cursor},{scenario.horizon})")
    if not timeline:
        report.add("empty configuration timeline")

    elementary = {elem for iv in scenario.timeline for elem in iv.mapping}
    flight_ids = [f.id for f in scenario.flights]
    if len(set(flight_ids)) != len(flight_ids):
        report.add("duplicate flight ids")
    for f in scenario.flights:
        if f.max_delay < 0:
            report.add(f"flight {f.id}: negative max_delay")
        prev_exit = None
        for c in f.crossings:
            if c.entry >= c.exit:
                report.add(f"flight {f.id}: degenerate crossing in {c.sector}")
            if c.entry < 0:
                report.add(f"flight {f.id}: crossing starts before scenario start")
            if c.exit + max(f.max_delay, 0) > scenario.horizon:
                report.add(
                    f"flight {f.id}: crossing of {c.sector} + max_delay exceeds horizon"
                )
            if prev_exit is not None and c.entry < prev_exit:
                report.add(f"flight {f.id}: crossings out of order at {c.sector}")
            prev_exit = c.exit
            if c.sector not in elementary:
                report.add(f"flight {f.id}: unmapped elementary sector {c.sector}")

    return report


def resolve_crossings(
    flight: FlightPlan, delay: int, scenario: Scenario
) -> List[Tuple[str, int, int]]:
    """Open-sector presence of a flight shifted by ``delay`` minutes.

    Each crossing is shifted, split at configuration boundaries, and mapped
    through the active interval; abutting fragments in the same open sector
    are merged. Raises OutOfHorizonError when the shift leaves the horizon.
    """
    if delay < 0 or delay > flight.max_delay:
        raise ValueError(f"delay {delay} out of [0, {flight.max_delay}]")
    fragments: List[Tuple[str, int, int]] = []
    for c in flight.crossings:
        a, b = c.entry + delay, c.exit + delay
        if b > scenario.horizon:
            raise OutOfHorizonError(
                f"flight {flight.id}: crossing of {c.sector} shifted to [{a},{b}) "
                f"exceeds horizon {scenario.horizon}"
            )
        for iv in scenario.timeline:
            lo, hi = max(a, iv.start), min(b, iv.end)
            if lo >= hi:
                continue
            try:
                open_id = iv.mapping[c.sector]
            except KeyError:
                raise KeyError(
                    f"elementary sector {c.sector} unmapped on [{iv.start},{iv.end})"
                ) from None
            fragments.append((open_id, lo, hi))
    fragments.sort(key=lambda frag: (frag[1], frag[2]))
    merged: List[Tuple[str, int, int]] = []
    for sector, lo, hi in fragments:
        if merged and merged[-1][0] == sector and merged[-1][2] == lo:
            merged[-1] = (sector, merged[-1][1], hi)
        else:
            merged.append((sector, lo, hi))
    return merged


def apply_local_max_delay(
    scenario: Scenario, selector: Callable[[FlightPlan], bool], cap: int
) -> Scenario:
    """Copy of the scenario with max_delay capped for flights matching ``selector``."""
    if cap < 0:
        raise ValueError("cap must be non-negative")
    flights = tuple(
        dataclasses.replace(f, max_delay=min(f.max_delay, cap)) if selector(f) else f
        for f in scenario.flights
    )
    return dataclasses.replace(scenario, flights=flights)


# --- JSON scenario files -------------------------------------------------
#
# Top-level keys: sectors, timeline, flights, horizon_min,
# period_duration_min, period_step_min. All times are integer minutes.


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "sectors": [{"id": s.id, "capacity": s.capacity} for s in scenario.sectors],
        "timeline": [
            {"start_min": iv.start, "end_min": iv.end, "mapping": dict(iv.mapping)}
            for iv in scenario.timeline
        ],
        "flights": [
            {
                "id": f.id,
                "crossings": [
                    {"sector": c.sector, "entry_min": c.entry, "exit_min": c.exit}
                    for c in f.crossings
                ],
                "max_delay_min": f.max_delay,
                "aircraft_class": f.aircraft_class,
                "regulatable": f.regulatable,
            }
            for f in scenario.flights
        ],
        "horizon_min": scenario.horizon,
        "period_duration_min": scenario.period_duration,
        "period_step_min": scenario.period_step,
    }


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        sectors = tuple(Sector(s["id"], int(s["capacity"])) for s in doc["sectors"])
        timeline = tuple(
            ConfigurationInterval(int(iv["start_min"]), int(iv["end_min"]), dict(iv["mapping"]))
            for iv in doc["timeline"]
        )
        flights = tuple(
            FlightPlan(
                id=f["id"],
                crossings=tuple(
                    SectorCrossing(c["sector"], int(c["entry_min"]), int(c["exit_min"]))
                    for c in f["crossings"]
                ),
                max_delay=int(f["max_delay_min"]),
                aircraft_class=f.get("aircraft_class", "medium"),
                regulatable=bool(f.get("regulatable", True)),
            )
            for f in doc["flights"]
        )
        return Scenario(
            sectors=sectors,
            timeline=timeline,
            flights=flights,
            horizon=int(doc["horizon_min"]),
            period_duration=int(doc.get("period_duration_min", 60)),
            period_step=int(doc.get("period_step_min", 30)),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed scenario document: {exc}") from exc


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def tiny3() -> Scenario:
    """Three flights, one sector of capacity 2; unique optimum delays f3 by 10."""
    return Scenario(
        sectors=(Sector("S1", 2),),
        timeline=(ConfigurationInterval(0, 120, {"S1": "S1"}),),
        flights=(
            FlightPlan("f1", (SectorCrossing("S1", 10, 20),), 10, "medium"),
            FlightPlan("f2", (SectorCrossing("S1", 15, 25),), 10, "medium"),
            FlightPlan("f3", (SectorCrossing("S1", 50, 59),), 10, "light"),
        ),
        horizon=120,
        period_duration=60,
        period_step=60,
    )
