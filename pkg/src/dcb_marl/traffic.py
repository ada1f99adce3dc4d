"""Demand tables, hotspot detection and the dynamic coordination graph.

Counting periods are half-open windows [start, start + duration) advanced by
``step`` minutes. A flight is counted in a (sector, period) cell when its
resolved presence interval in that sector overlaps the window; presence
intervals are treated half-open as well, so a flight whose entry coincides
with a window's end instant does not count.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from .model import DelayAssignment, Scenario, check_assignment, resolve_crossings

Cell = Tuple[str, int]  # (open sector id, period index)


@dataclass(frozen=True)
class CountingPeriod:
    index: int
    start: int
    end: int


@dataclass
class DemandTable:
    counts: Dict[Cell, int]
    periods: List[CountingPeriod]

    def demand(self, sector: str, period_index: int) -> int:
        return self.counts.get((sector, period_index), 0)


@dataclass(frozen=True)
class Hotspot:
    sector: str
    period: CountingPeriod
    demand: int
    capacity: int
    participants: FrozenSet[str]


@dataclass(frozen=True)
class CoordinationGraph:
    vertices: FrozenSet[str]
    edges: FrozenSet[Tuple[str, str]]  # canonical: lexicographically ordered pairs

    def neighbours(self, flight_id: str) -> Set[str]:
        """Interacting flights, including the flight itself when present."""
        if flight_id not in self.vertices:
            return set()
        out = {flight_id}
        for a, b in self.edges:
            if a == flight_id:
                out.add(b)
            elif b == flight_id:
                out.add(a)
        return out

    def degree(self, flight_id: str) -> int:
        return sum(1 for a, b in self.edges if flight_id in (a, b))


def counting_periods(horizon: int, duration: int, step: int) -> List[CountingPeriod]:
    """Windows at starts 0, step, 2*step, ... while start < horizon."""
    if duration <= 0 or step <= 0:
        raise ValueError("duration and step must be positive")
    if step > duration:
        raise ValueError("step must not exceed duration")
    if horizon < duration:
        raise ValueError("horizon shorter than one counting period")
    return [
        CountingPeriod(k, start, start + duration)
        for k, start in enumerate(range(0, horizon, step))
    ]


def _overlapping_period_indices(
    entry: int, exit: int, duration: int, step: int, n_periods: int
) -> range:
    """Indices of windows overlapping the half-open interval [entry, exit)."""
    # window k = [k*step, k*step + duration): need k*step < exit and k*step + duration > entry
    lo = max(0, (entry - duration) // step + 1)
    hi = min(n_periods - 1, (exit - 1) // step)
    return range(lo, hi + 1)


def _presence_by_sector(
    scenario: Scenario, delays: DelayAssignment
) -> Dict[str, Dict[str, List[Tuple[int, int]]]]:
    """flight id -> open sector -> merged presence intervals under its delay."""
    out: Dict[str, Dict[str, List[Tuple[int, int]]]] = {}
    for f in scenario.flights:
        per_sector: Dict[str, List[Tuple[int, int]]] = {}
        for sector, a, b in resolve_crossings(f, delays.get(f.id, 0), scenario):
            per_sector.setdefault(sector, []).append((a, b))
        out[f.id] = per_sector
    return out


def _cell_participants(
    scenario: Scenario, delays: DelayAssignment, mode: str = "overlap"
) -> Tuple[Dict[Cell, Set[str]], List[CountingPeriod]]:
    if mode not in ("overlap", "entry"):
        raise ValueError(f"unknown demand counting mode {mode!r}")
    periods = counting_periods(
        scenario.horizon, scenario.period_duration, scenario.period_step
    )
    duration, step = scenario.period_duration, scenario.period_step
    cells: Dict[Cell, Set[str]] = {}
    for fid, per_sector in _presence_by_sector(scenario, delays).items():
        for sector, intervals in per_sector.items():
            for a, b in intervals:
                span = (a, b) if mode == "overlap" else (a, a + 1)
                for k in _overlapping_period_indices(*span, duration, step, len(periods)):
                    cells.setdefault((sector, k), set()).add(fid)
    return cells, periods


def compute_demand(
    scenario: Scenario, delays: DelayAssignment, mode: str = "overlap"
) -> DemandTable:
    """Entry counts per (open sector, counting period) under a delay assignment.

    ``mode="overlap"`` counts a flight whose presence interval overlaps the
    window (the default); ``mode="entry"`` counts only entries inside it.
    A flight counts at most once per cell.
    """
    check_assignment(scenario, delays)
    cells, periods = _cell_participants(scenario, delays, mode)
    return DemandTable({cell: len(fids) for cell, fids in cells.items()}, periods)


def detect_hotspots(
    scenario: Scenario, delays: DelayAssignment, mode: str = "overlap"
) -> List[Hotspot]:
    """Cells whose demand exceeds capacity, ordered by (sector id, period index)."""
    check_assignment(scenario, delays)
    cells, periods = _cell_participants(scenario, delays, mode)
    capacities = {s.id: s.capacity for s in scenario.sectors}
    out = []
    for (sector, k), fids in sorted(cells.items()):
        if len(fids) > capacities[sector]:
            out.append(
                Hotspot(sector, periods[k], len(fids), capacities[sector], frozenset(fids))
            )
    return out


def congested_duration(
    flight_id: str, scenario: Scenario, delays: DelayAssignment
) -> int:
    """Minutes of the flight's presence inside congested cells it participates in.

    Overlapping counting periods are unioned per sector, so a congested
    minute is never counted twice.
    """
    hotspots = detect_hotspots(scenario, delays)
    flight = scenario.flight_map()[flight_id]
    presence = _presence_by_sector(scenario, delays)[flight_id]
    clipped: List[Tuple[int, int]] = []
    for h in hotspots:
        if flight_id not in h.participants:
            continue
        for a, b in presence.get(h.sector, ()):
            lo, hi = max(a, h.period.start), min(b, h.period.end)
            if lo < hi:
                clipped.append((lo, hi))
    return _union_measure(clipped)


def _union_measure(intervals: Iterable[Tuple[int, int]]) -> int:
    total = 0
    last_end = None
    for a, b in sorted(intervals):
        if last_end is None or a >= last_end:
            total += b - a
            last_end = b
        elif b > last_end:
            total += b - last_end
            last_end = b
    return total


def build_graph(
    hotspots: Sequence[Hotspot], vertices: Optional[Iterable[str]] = None
) -> CoordinationGraph:
    """Union of cliques over each hotspot's participants.

    ``vertices`` should be all flight ids of the scenario; when omitted the
    vertex set defaults to the flights appearing in the hotspots.
    """
    edges: Set[Tuple[str, str]] = set()
    seen: Set[str] = set()
    for h in hotspots:
        members = sorted(h.participants)
        seen.update(members)
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                edges.add((a, b))
    verts = frozenset(vertices) if vertices is not None else frozenset(seen)
    return CoordinationGraph(verts, frozenset(edges))


def demand_csv(scenario: Scenario, table: DemandTable) -> str:
    """CSV rows (sector, period_start, period_end, demand, capacity, excess)."""
    capacities = {s.id: s.capacity for s in scenario.sectors}
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["sector", "period_start", "period_end", "demand", "capacity", "excess"])
    for (sector, k), demand in sorted(table.counts.items()):
        p = table.periods[k]
        cap = capacities[sector]
        writer.writerow([sector, p.start, p.end, demand, cap, max(0, demand - cap)])
    return buf.getvalue()


def hotspot_csv(hotspots: Sequence[Hotspot]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["sector", "period_start", "period_end", "demand", "capacity", "excess"])
    for h in hotspots:
        writer.writerow(
            [h.sector, h.period.start, h.period.end, h.demand, h.capacity, h.demand - h.capacity]
        )
    return buf.getvalue()
