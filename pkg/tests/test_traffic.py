import random

import pytest

from dcb_marl import (
    ConfigurationInterval,
    FlightPlan,
    Scenario,
    Sector,
    SectorCrossing,
    build_graph,
    compute_demand,
    congested_duration,
    counting_periods,
    detect_hotspots,
    zero_delays,
)
from dcb_marl.traffic import demand_csv, hotspot_csv


class TestCountingPeriods:
    def test_non_overlapping_hourly_windows(self):
        periods = counting_periods(120, 60, 60)
        assert [(p.start, p.end) for p in periods] == [(0, 60), (60, 120)]
        assert [p.index for p in periods] == [0, 1]

    def test_sliding_windows_advance_by_step(self):
        periods = counting_periods(120, 60, 30)
        assert [p.start for p in periods] == [0, 30, 60, 90]
        assert all(p.end - p.start == 60 for p in periods)

    def test_horizon_equal_to_duration_gives_one_window(self):
        assert len(counting_periods(60, 60, 60)) == 1

    def test_step_larger_than_duration_rejected(self):
        with pytest.raises(ValueError):
            counting_periods(120, 30, 60)

    def test_non_positive_arguments_rejected(self):
        with pytest.raises(ValueError):
            counting_periods(120, 0, 30)
        with pytest.raises(ValueError):
            counting_periods(120, 60, 0)

    def test_horizon_shorter_than_duration_rejected(self):
        with pytest.raises(ValueError):
            counting_periods(30, 60, 60)


class TestComputeDemand:
    def test_tiny3_all_flights_in_first_period(self, tiny):
        table = compute_demand(tiny, zero_delays(tiny))
        assert table.demand("S1", 0) == 3
        assert table.demand("S1", 1) == 0

    def test_delaying_f3_moves_it_to_second_period(self, tiny):
        table = compute_demand(tiny, {"f1": 0, "f2": 0, "f3": 10})
        assert table.demand("S1", 0) == 2
        assert table.demand("S1", 1) == 1

    def test_flight_counts_once_per_cell(self):
        # Two crossings of the same sector inside one window count once.
        sc = Scenario(
            sectors=(Sector("A", 1),),
            timeline=(ConfigurationInterval(0, 60, {"A": "A"}),),
            flights=(
                FlightPlan(
                    "f1",
                    (SectorCrossing("A", 5, 10), SectorCrossing("A", 20, 25)),
                    0,
                ),
            ),
            horizon=60,
            period_duration=60,
            period_step=60,
        )
        assert compute_demand(sc, zero_delays(sc)).demand("A", 0) == 1

    def test_entry_mode_counts_entries_only(self):
        # Presence [50, 70) with 60/60 windows: overlap mode hits both
        # windows, entry mode only the one containing minute 50.
        sc = Scenario(
            sectors=(Sector("A", 1),),
            timeline=(ConfigurationInterval(0, 120, {"A": "A"}),),
            flights=(FlightPlan("f1", (SectorCrossing("A", 50, 70),), 0),),
            horizon=120,
            period_duration=60,
            period_step=60,
        )
        overlap = compute_demand(sc, zero_delays(sc), mode="overlap")
        entry = compute_demand(sc, zero_delays(sc), mode="entry")
        assert overlap.demand("A", 0) == 1 and overlap.demand("A", 1) == 1
        assert entry.demand("A", 0) == 1 and entry.demand("A", 1) == 0

    def test_unknown_mode_rejected(self, tiny):
        with pytest.raises(ValueError):
            compute_demand(tiny, zero_delays(tiny), mode="midpoint")

    def test_infeasible_delays_rejected(self, tiny):
        with pytest.raises(ValueError):
            compute_demand(tiny, {"f1": 99})


class TestDetectHotspots:
    def test_tiny3_has_one_hotspot_with_all_flights(self, tiny):
        hotspots = detect_hotspots(tiny, zero_delays(tiny))
        assert len(hotspots) == 1
        h = hotspots[0]
        assert (h.sector, h.period.start, h.demand, h.capacity) == ("S1", 0, 3, 2)
        assert h.participants == frozenset({"f1", "f2", "f3"})

    def test_tiny3_optimum_clears_all_hotspots(self, tiny):
        assert detect_hotspots(tiny, {"f1": 0, "f2": 0, "f3": 10}) == []

    def test_demand_equal_to_capacity_is_not_a_hotspot(self, tiny):
        # Demand 2 against capacity 2 in the first window after f3 leaves.
        hotspots = detect_hotspots(tiny, {"f1": 0, "f2": 0, "f3": 10})
        table = compute_demand(tiny, {"f1": 0, "f2": 0, "f3": 10})
        assert table.demand("S1", 0) == 2
        assert hotspots == []

    def test_zero_capacity_sector_any_demand_is_a_hotspot(self):
        sc = Scenario(
            sectors=(Sector("A", 0),),
            timeline=(ConfigurationInterval(0, 60, {"A": "A"}),),
            flights=(FlightPlan("f1", (SectorCrossing("A", 5, 10),), 0),),
            horizon=60,
            period_duration=60,
            period_step=60,
        )
        hotspots = detect_hotspots(sc, zero_delays(sc))
        assert len(hotspots) == 1
        assert hotspots[0].demand == 1

    def test_ordering_by_sector_then_period(self):
        sc = Scenario(
            sectors=(Sector("A", 0), Sector("B", 0)),
            timeline=(ConfigurationInterval(0, 120, {"A": "A", "B": "B"}),),
            flights=(
                FlightPlan("f1", (SectorCrossing("B", 5, 10),), 0),
                FlightPlan("f2", (SectorCrossing("A", 70, 80),), 0),
                FlightPlan("f3", (SectorCrossing("A", 5, 10),), 0),
            ),
            horizon=120,
            period_duration=60,
            period_step=60,
        )
        hotspots = detect_hotspots(sc, zero_delays(sc))
        assert [(h.sector, h.period.index) for h in hotspots] == [
            ("A", 0),
            ("A", 1),
            ("B", 0),
        ]


class TestCongestedDuration:
    def test_tiny3_f3_nine_minutes(self, tiny):
        assert congested_duration("f3", tiny, zero_delays(tiny)) == 9

    def test_solved_assignment_gives_zero(self, tiny):
        assert congested_duration("f3", tiny, {"f1": 0, "f2": 0, "f3": 10}) == 0

    def test_overlapping_windows_do_not_double_count(self):
        # Presence [55, 65) with 60-minute windows sliding by 30 and a
        # capacity-0 sector: the interval lies in the [30,90) and [0,60)
        # (partially) windows, yet only 10 distinct minutes are congested.
        sc = Scenario(
            sectors=(Sector("A", 0),),
            timeline=(ConfigurationInterval(0, 120, {"A": "A"}),),
            flights=(FlightPlan("f1", (SectorCrossing("A", 55, 65),), 0),),
            horizon=120,
            period_duration=60,
            period_step=30,
        )
        assert congested_duration("f1", sc, zero_delays(sc)) == 10

    def test_never_exceeds_total_presence(self, tiny):
        for fid in ("f1", "f2", "f3"):
            flight = tiny.flight_map()[fid]
            presence = sum(c.exit - c.entry for c in flight.crossings)
            assert 0 <= congested_duration(fid, tiny, zero_delays(tiny)) <= presence


class TestBuildGraph:
    def test_tiny3_hotspot_forms_a_triangle(self, tiny):
        graph = build_graph(detect_hotspots(tiny, zero_delays(tiny)))
        assert graph.edges == frozenset({("f1", "f2"), ("f1", "f3"), ("f2", "f3")})
        assert graph.neighbours("f1") == {"f1", "f2", "f3"}
        assert graph.degree("f1") == 2

    def test_neighbourhood_includes_self(self, tiny):
        graph = build_graph(detect_hotspots(tiny, zero_delays(tiny)))
        for fid in ("f1", "f2", "f3"):
            assert fid in graph.neighbours(fid)

    def test_disjoint_hotspots_give_disjoint_cliques(self):
        sc = Scenario(
            sectors=(Sector("A", 1), Sector("B", 1)),
            timeline=(ConfigurationInterval(0, 60, {"A": "A", "B": "B"}),),
            flights=(
                FlightPlan("f1", (SectorCrossing("A", 5, 10),), 0),
                FlightPlan("f2", (SectorCrossing("A", 6, 12),), 0),
                FlightPlan("f3", (SectorCrossing("B", 5, 10),), 0),
                FlightPlan("f4", (SectorCrossing("B", 6, 12),), 0),
            ),
            horizon=60,
            period_duration=60,
            period_step=60,
        )
        graph = build_graph(detect_hotspots(sc, zero_delays(sc)))
        assert graph.edges == frozenset({("f1", "f2"), ("f3", "f4")})
        assert graph.neighbours("f1") == {"f1", "f2"}

    def test_vertex_outside_any_hotspot_has_self_only_neighbourhood(self, tiny):
        graph = build_graph([], vertices=["f1", "f2"])
        assert graph.neighbours("f1") == {"f1"}
        assert graph.degree("f1") == 0

    def test_unknown_vertex_has_empty_neighbourhood(self, tiny):
        graph = build_graph(detect_hotspots(tiny, zero_delays(tiny)))
        assert graph.neighbours("nope") == set()


def random_micro_scenario(rng):
    n_sectors = rng.randint(1, 2)
    sectors = tuple(Sector(f"S{k}", rng.randint(0, 3)) for k in range(n_sectors))
    mapping = {s.id: s.id for s in sectors}
    horizon = 120
    flights = []
    for i in range(rng.randint(1, 5)):
        crossings = []
        t = rng.randint(0, 40)
        for _ in range(rng.randint(1, 2)):
            sector = rng.choice(sectors).id
            a = t + rng.randint(0, 10)
            b = a + rng.randint(1, 15)
            crossings.append(SectorCrossing(sector, a, b))
            t = b
        max_delay = rng.randint(0, 6)
        if crossings[-1].exit + max_delay > horizon:
            max_delay = horizon - crossings[-1].exit
        flights.append(FlightPlan(f"f{i}", tuple(crossings), max_delay))
    duration = rng.choice([15, 30, 60])
    step = rng.choice([d for d in (15, 30, 60) if d <= duration])
    return Scenario(
        sectors=sectors,
        timeline=(ConfigurationInterval(0, horizon, mapping),),
        flights=tuple(flights),
        horizon=horizon,
        period_duration=duration,
        period_step=step,
    )


def brute_force_demand(scenario, delays):
    """Per-minute occupancy scan, independent of the interval arithmetic."""
    from dcb_marl import resolve_crossings

    periods = counting_periods(
        scenario.horizon, scenario.period_duration, scenario.period_step
    )
    counts = {}
    for f in scenario.flights:
        resolved = resolve_crossings(f, delays.get(f.id, 0), scenario)
        for p in periods:
            present = set()
            for sector, a, b in resolved:
                for minute in range(a, b):
                    if p.start <= minute < p.end:
                        present.add(sector)
            for sector in present:
                counts[(sector, p.index)] = counts.get((sector, p.index), 0) + 1
    return counts


class TestDemandOracle:
    def test_matches_per_minute_scan_on_random_scenarios(self):
        rng = random.Random(20260823)
        for _ in range(100):
            sc = random_micro_scenario(rng)
            delays = {f.id: rng.randint(0, f.max_delay) for f in sc.flights}
            expected = brute_force_demand(sc, delays)
            table = compute_demand(sc, delays)
            assert {c: n for c, n in table.counts.items() if n} == expected

    def test_hotspot_list_is_exactly_the_over_capacity_cells(self):
        rng = random.Random(906090)
        for _ in range(100):
            sc = random_micro_scenario(rng)
            delays = {f.id: rng.randint(0, f.max_delay) for f in sc.flights}
            caps = {s.id: s.capacity for s in sc.sectors}
            expected = {
                cell
                for cell, n in brute_force_demand(sc, delays).items()
                if n > caps[cell[0]]
            }
            got = {(h.sector, h.period.index) for h in detect_hotspots(sc, delays)}
            assert got == expected


class TestCsvExports:
    def test_demand_csv_rows(self, tiny):
        text = demand_csv(tiny, compute_demand(tiny, zero_delays(tiny)))
        lines = text.strip().splitlines()
        assert lines[0] == "sector,period_start,period_end,demand,capacity,excess"
        assert lines[1] == "S1,0,60,3,2,1"

    def test_hotspot_csv_rows(self, tiny):
        text = hotspot_csv(detect_hotspots(tiny, zero_delays(tiny)))
        lines = text.strip().splitlines()
        assert lines[0] == "sector,period_start,period_end,demand,capacity,excess"
        assert lines[1] == "S1,0,60,3,2,1"

    def test_hotspot_csv_empty_has_header_only(self):
        assert hotspot_csv([]).strip().splitlines() == [
            "sector,period_start,period_end,demand,capacity,excess"
        ]
