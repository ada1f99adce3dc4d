"""Multi-run evaluation harness: per-solution metrics, aggregate statistics
with a normality test, seeded repeated experiments, and local-max-delay
sweeps.

Delays of at most 4 minutes count as "no delay": they are excluded from the
regulated-flight count, the filtered total and the average delay per flight.
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from scipy import stats as scipy_stats

from .learners import LearnerConfig, TrainResult, train
from .model import (
    DelayAssignment,
    FlightPlan,
    Scenario,
    apply_local_max_delay,
    check_assignment,
    zero_delays,
)
from .reward import RewardParams, StrategicCostTable
from .traffic import build_graph, detect_hotspots

NO_DELAY_THRESHOLD_MIN = 4  # delays up to this many minutes are "no delay"


class InsufficientDataError(ValueError):
    """Aggregate statistics need at least two runs."""


class UndefinedScoreError(ValueError):
    """Degree of difficulty is undefined without hotspot participants."""


@dataclass
class RunMetrics:
    avg_delay: float
    regulated_flights: int
    remaining_hotspots: int
    total_delay: int  # sum over regulated flights only (the >4-minute subset)
    histogram: Dict[str, int]
    seed: Optional[int] = None
    solved: bool = False


def histogram_bins(max_delay: int) -> List[tuple]:
    """(label, lo, hi) delay bins: 5-9, 10-29, 30-59, then 30-minute bins."""
    bins = [("5-9", 5, 9), ("10-29", 10, 29), ("30-59", 30, 59)]
    lo = 60
    while lo <= max_delay:
        hi = lo + 29
        bins.append((f"{lo}-{hi}", lo, hi))
        lo = hi + 1
    return bins


def run_metrics(scenario: Scenario, solution: DelayAssignment) -> RunMetrics:
    check_assignment(scenario, solution)
    n = len(scenario.flights)
    regulated = [d for d in solution.values() if d > NO_DELAY_THRESHOLD_MIN]
    total = sum(regulated)
    remaining = len(detect_hotspots(scenario, solution))
    max_delay = max((f.max_delay for f in scenario.flights), default=0)
    histogram = {}
    for label, lo, hi in histogram_bins(max_delay):
        count = sum(1 for d in regulated if lo <= d <= hi)
        if count:
            histogram[label] = count
    return RunMetrics(
        avg_delay=total / n if n else 0.0,
        regulated_flights=len(regulated),
        remaining_hotspots=remaining,
        total_delay=total,
        histogram=histogram,
        solved=remaining == 0,
    )


def degree_of_difficulty(
    avg_delay: float, flights_with_delay: int, flights_in_hotspots: int
) -> float:
    if flights_in_hotspots <= 0:
        raise UndefinedScoreError("no flights participate in hotspots")
    return avg_delay * flights_with_delay / flights_in_hotspots


@dataclass
class AggregateStats:
    mean: float
    std: float
    median: float
    ks_p_value: Optional[float]  # None when undefined (zero spread)
    n: int


def aggregate(values_or_runs, metric: Optional[str] = None) -> AggregateStats:
    """Sample mean/std/median plus a Kolmogorov-Smirnov p-value against a
    normal fitted to the sample. The K-S p-value is undefined for a
    zero-spread sample and reported as None.
    """
    if metric is not None:
        values = [float(getattr(r, metric)) for r in values_or_runs]
    else:
        values = [float(v) for v in values_or_runs]
    if len(values) < 2:
        raise InsufficientDataError("need at least 2 runs to aggregate")
    mean = statistics.fmean(values)
    std = statistics.stdev(values)
    median = statistics.median(values)
    if std == 0:
        ks_p = None
    else:
        ks_p = float(scipy_stats.kstest(values, "norm", args=(mean, std)).pvalue)
    return AggregateStats(mean=mean, std=std, median=median, ks_p_value=ks_p, n=len(values))


@dataclass
class ExperimentResult:
    method: str
    n_runs: int
    base_seed: int
    runs: List[RunMetrics]
    stats: Dict[str, AggregateStats]
    solutions: List[DelayAssignment]
    curves: list  # per-run list of CurvePoint

    @property
    def all_solved(self) -> bool:
        return all(r.solved for r in self.runs)


def _one_run(
    scenario: Scenario,
    method: str,
    cfg: LearnerConfig,
    seed: int,
    params: Optional[RewardParams],
    table: Optional[StrategicCostTable],
) -> TrainResult:
    import dataclasses

    run_cfg = dataclasses.replace(cfg, seed=seed)
    return train(scenario, method, run_cfg, params=params, table=table)


def experiment(
    scenario: Scenario,
    method: str,
    cfg: LearnerConfig,
    n_runs: int,
    params: Optional[RewardParams] = None,
    table: Optional[StrategicCostTable] = None,
    out_dir: Optional[Path] = None,
    jobs: int = 1,
) -> ExperimentResult:
    """Repeat training with seeds cfg.seed + 0..n_runs-1 and aggregate the
    per-run metrics; optionally persist curves, solutions and histograms.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    seeds = [cfg.seed + k for k in range(n_runs)]
    if jobs > 1 and n_runs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(
                pool.map(
                    _one_run,
                    [scenario] * n_runs,
                    [method] * n_runs,
                    [cfg] * n_runs,
                    seeds,
                    [params] * n_runs,
                    [table] * n_runs,
                )
            )
    else:
        results = [_one_run(scenario, method, cfg, s, params, table) for s in seeds]

    runs = []
    for seed, res in zip(seeds, results):
        m = run_metrics(scenario, res.solution)
        m.seed = seed
        runs.append(m)
    stats = {}
    if n_runs >= 2:
        for metric in ("avg_delay", "regulated_flights", "remaining_hotspots"):
            stats[metric] = aggregate(runs, metric)
    result = ExperimentResult(
        method=method,
        n_runs=n_runs,
        base_seed=cfg.seed,
        runs=runs,
        stats=stats,
        solutions=[res.solution for res in results],
        curves=[res.curve for res in results],
    )
    if out_dir is not None:
        persist_experiment(result, scenario, Path(out_dir))
    return result


def write_curve_csv(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "epsilon", "hotspot_count", "avg_delay", "global_reward"])
        for point in curve:
            writer.writerow(
                [point.episode, point.epsilon, point.hotspot_count, point.avg_delay, point.global_reward]
            )


def write_solution_csv(solution: DelayAssignment, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flight_id", "delay_min"])
        for fid in sorted(solution):
            writer.writerow([fid, solution[fid]])


def read_solution_csv(path) -> DelayAssignment:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return {row["flight_id"]: int(row["delay_min"]) for row in reader}


def write_histogram_csv(metrics: RunMetrics, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "flights"])
        for label, count in metrics.histogram.items():
            writer.writerow([label, count])


def persist_experiment(result: ExperimentResult, scenario: Scenario, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for m, solution, curve in zip(result.runs, result.solutions, result.curves):
        write_curve_csv(curve, out_dir / f"curve_{m.seed}.csv")
        write_solution_csv(solution, out_dir / f"solution_{m.seed}.csv")
        write_histogram_csv(m, out_dir / f"histogram_{m.seed}.csv")
    doc = {
        "method": result.method,
        "n_runs": result.n_runs,
        "base_seed": result.base_seed,
        "runs": [
            {
                "seed": m.seed,
                "avg_delay": m.avg_delay,
                "regulated_flights": m.regulated_flights,
                "remaining_hotspots": m.remaining_hotspots,
                "total_delay": m.total_delay,
                "solved": m.solved,
            }
            for m in result.runs
        ],
        "stats": {
            metric: {
                "mean": s.mean,
                "std": s.std,
                "median": s.median,
                "ks_p_value": s.ks_p_value,
                "n": s.n,
            }
            for metric, s in result.stats.items()
        },
    }
    with open(out_dir / "metrics.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class CapSummary:
    cap: int
    mean_remaining_hotspots: float
    mean_avg_delay: float
    mean_regulated_flights: float
    solved_all_runs: bool


def cap_sweep(
    scenario: Scenario,
    selector: Callable[[FlightPlan], bool],
    caps: Sequence[int],
    method: str,
    cfg: LearnerConfig,
    n_runs: int,
    params: Optional[RewardParams] = None,
    table: Optional[StrategicCostTable] = None,
    out_dir: Optional[Path] = None,
    jobs: int = 1,
) -> List[CapSummary]:
    """Apply each local max-delay cap to the selected flights and rerun the
    experiment, reporting whether all hotspots were resolved per cap.
    """
    if not caps:
        raise ValueError("caps must be non-empty")
    summaries = []
    for cap in caps:
        capped = apply_local_max_delay(scenario, selector, cap)
        result = experiment(capped, method, cfg, n_runs, params, table, jobs=jobs)
        summaries.append(
            CapSummary(
                cap=cap,
                mean_remaining_hotspots=statistics.fmean(
                    r.remaining_hotspots for r in result.runs
                ),
                mean_avg_delay=statistics.fmean(r.avg_delay for r in result.runs),
                mean_regulated_flights=statistics.fmean(
                    r.regulated_flights for r in result.runs
                ),
                solved_all_runs=result.all_solved,
            )
        )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "sweep.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["cap", "mean_remaining_hotspots", "mean_avg_delay", "mean_regulated_flights", "solved_all_runs"]
            )
            for s in summaries:
                writer.writerow(
                    [s.cap, s.mean_remaining_hotspots, s.mean_avg_delay, s.mean_regulated_flights, int(s.solved_all_runs)]
                )
    return summaries


def initial_hotspot_flights(scenario: Scenario) -> int:
    """Distinct flights participating in zero-delay hotspots."""
    flights = set()
    for h in detect_hotspots(scenario, zero_delays(scenario)):
        flights.update(h.participants)
    return len(flights)


def graph_degree_stats(scenario: Scenario, delays: Optional[DelayAssignment] = None):
    """(min, max, mean) degree over non-isolated vertices of the graph."""
    delays = delays if delays is not None else zero_delays(scenario)
    graph = build_graph(
        detect_hotspots(scenario, delays), [f.id for f in scenario.flights]
    )
    degrees = [graph.degree(v) for v in graph.vertices]
    nonzero = [d for d in degrees if d > 0]
    if not nonzero:
        return (0, 0, 0.0)
    return (min(nonzero), max(nonzero), statistics.fmean(nonzero))
