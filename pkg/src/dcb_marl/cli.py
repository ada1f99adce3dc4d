"""Command-line front end.

Subcommands cover the full workflow: generate synthetic scenarios, validate
and inspect them, train either learner, evaluate or brute-force solutions,
run seeded multi-run experiments and local-max-delay sweeps, and probe the
reward signal. Exit codes: 2 validation failure, 3 infeasibility, 4 I/O
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import experiments, generate, learners, model, reward, traffic

EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4

log = logging.getLogger("dcb_marl")


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _load_scenario(path: str) -> model.Scenario:
    try:
        scenario = model.load_scenario(path)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"cannot read scenario {path}: {exc}", EXIT_IO)
    report = model.validate_scenario(scenario)
    if not report.ok:
        lines = "\n".join(f"  - {v}" for v in report.violations)
        raise CliError(f"invalid scenario {path}:\n{lines}", EXIT_VALIDATION)
    return scenario


def _reward_params(args) -> reward.RewardParams:
    return reward.RewardParams(
        lambda_weight=args.lambda_weight,
        positive_reward=args.positive_reward,
        hotspot_rate=args.hotspot_rate,
    )


def _cost_table(args) -> reward.StrategicCostTable:
    if args.cost_table is None:
        return reward.default_cost_table()
    try:
        return reward.load_cost_table(args.cost_table)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CliError(f"cannot read cost table {args.cost_table}: {exc}", EXIT_IO)


def _learner_config(args) -> learners.LearnerConfig:
    return learners.LearnerConfig(
        alpha=args.alpha,
        gamma=args.gamma,
        episodes=args.episodes,
        seed=args.seed,
    )


def _write_text(path, text: str) -> None:
    try:
        if path is None or path == "-":
            sys.stdout.write(text)
        else:
            Path(path).write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO)


def _add_reward_flags(p) -> None:
    p.add_argument("--lambda", dest="lambda_weight", type=float, default=20.0,
                   help="weight on the strategic delay cost (default 20)")
    p.add_argument("--positive-reward", type=float, default=60.0,
                   help="reward when clear of congestion (default 60)")
    p.add_argument("--hotspot-rate", type=float, default=81.0,
                   help="cost per congested minute (default 81)")
    p.add_argument("--cost-table", default=None,
                   help="JSON file with per-class delay cost curves")


def _add_train_flags(p) -> None:
    p.add_argument("--method", choices=("irl", "edmarl"), default="edmarl")
    p.add_argument("--episodes", type=int, default=15000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=0.99)
    _add_reward_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcb-marl",
        description="Demand-capacity balancing by multiagent reinforcement learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic scenario")
    p.add_argument("--flights", type=int, required=True)
    p.add_argument("--sectors", type=int, required=True)
    p.add_argument("--hotspots", type=int, required=True,
                   help="target zero-delay hotspot count")
    p.add_argument("--tolerance", type=int, default=2)
    p.add_argument("--max-delay", type=int, nargs=2, default=(6, 10),
                   metavar=("LO", "HI"))
    p.add_argument("--horizon", type=int, default=480)
    p.add_argument("--period-duration", type=int, default=60)
    p.add_argument("--period-step", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-", help="output scenario path (- for stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="validate a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("inspect", help="demand, hotspots, graph and difficulty")
    p.add_argument("scenario")
    p.add_argument("--delays", default=None, help="solution CSV to apply first")
    p.add_argument("--demand-csv", default=None, help="write the demand table here")
    p.add_argument("--hotspot-csv", default=None, help="write the hotspot list here")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("train", help="train one learner on a scenario")
    p.add_argument("scenario")
    _add_train_flags(p)
    p.add_argument("--out", default=None, help="directory for solution/curve/Q files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a delay assignment")
    p.add_argument("scenario")
    p.add_argument("delays", help="solution CSV (flight_id,delay_min)")
    _add_reward_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="exhaustive optimum for small scenarios")
    p.add_argument("scenario")
    p.add_argument("--objective", choices=("total_delay", "weighted_cost"),
                   default="total_delay")
    p.add_argument("--budget", type=int, default=10_000_000,
                   help="maximum number of joint assignments to enumerate")
    _add_reward_flags(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("experiment", help="repeated seeded training runs")
    p.add_argument("scenario")
    _add_train_flags(p)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None, help="directory for per-run artifacts")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="experiment across local max-delay caps")
    p.add_argument("scenario")
    _add_train_flags(p)
    p.add_argument("--caps", type=int, nargs="+", required=True)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--flights", nargs="*", default=None,
                   help="flight ids to cap (default: all)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose-reward",
                       help="factoredness and learnability of the local reward")
    p.add_argument("scenario")
    p.add_argument("--flight", required=True)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    _add_reward_flags(p)
    p.set_defaults(func=cmd_diagnose_reward)

    return parser


def cmd_generate(args) -> int:
    params = generate.GeneratorParams(
        n_flights=args.flights,
        n_sectors=args.sectors,
        target_hotspots=args.hotspots,
        hotspot_tolerance=args.tolerance,
        max_delay_range=tuple(args.max_delay),
        horizon=args.horizon,
        period_duration=args.period_duration,
        period_step=args.period_step,
    )
    try:
        scenario = generate.generate_scenario(params, args.seed)
    except generate.GenerationError as exc:
        raise CliError(str(exc), EXIT_INFEASIBLE)
    text = json.dumps(model.scenario_to_dict(scenario), indent=2, sort_keys=True) + "\n"
    _write_text(args.out, text)
    count = len(traffic.detect_hotspots(scenario, model.zero_delays(scenario)))
    log.info("generated %d flights, %d sectors, %d initial hotspots",
             args.flights, args.sectors, count)
    return 0


def cmd_validate(args) -> int:
    try:
        scenario = model.load_scenario(args.scenario)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"cannot read scenario {args.scenario}: {exc}", EXIT_IO)
    report = model.validate_scenario(scenario)
    if report.ok:
        print(f"OK: {len(scenario.flights)} flights, {len(scenario.sectors)} sectors")
        return 0
    for v in report.violations:
        print(f"violation: {v}")
    return EXIT_VALIDATION


def cmd_inspect(args) -> int:
    scenario = _load_scenario(args.scenario)
    if args.delays is not None:
        try:
            delays = experiments.read_solution_csv(args.delays)
        except (OSError, KeyError, ValueError) as exc:
            raise CliError(f"cannot read delays {args.delays}: {exc}", EXIT_IO)
    else:
        delays = model.zero_delays(scenario)
    demand = traffic.compute_demand(scenario, delays)
    hotspots = traffic.detect_hotspots(scenario, delays)
    if args.demand_csv:
        _write_text(args.demand_csv, traffic.demand_csv(scenario, demand))
    if args.hotspot_csv:
        _write_text(args.hotspot_csv, traffic.hotspot_csv(hotspots))
    d_min, d_max, d_avg = experiments.graph_degree_stats(scenario, delays)
    print(f"flights: {len(scenario.flights)}")
    print(f"sectors: {len(scenario.sectors)}")
    print(f"counting periods: {len(demand.periods)}")
    print(f"hotspots: {len(hotspots)}")
    for h in hotspots:
        print(f"  {h.sector} [{h.period.start},{h.period.end}) "
              f"demand {h.demand} capacity {h.capacity}")
    print(f"graph degree (non-isolated): min {d_min} max {d_max} avg {d_avg:.2f}")
    in_hotspots = experiments.initial_hotspot_flights(scenario)
    regulated = [d for d in delays.values() if d > experiments.NO_DELAY_THRESHOLD_MIN]
    if in_hotspots and regulated:
        avg_delay = sum(regulated) / len(scenario.flights)
        score = experiments.degree_of_difficulty(avg_delay, len(regulated), in_hotspots)
        print(f"degree of difficulty: {score:.4f}")
    return 0


def cmd_train(args) -> int:
    scenario = _load_scenario(args.scenario)
    result = learners.train(
        scenario, args.method, _learner_config(args),
        params=_reward_params(args), table=_cost_table(args),
    )
    metrics = experiments.run_metrics(scenario, result.solution)
    print(f"method: {args.method}")
    print(f"solved: {result.solved}")
    print(f"remaining hotspots: {result.remaining_hotspots}")
    print(f"regulated flights: {metrics.regulated_flights}")
    print(f"avg delay per flight: {metrics.avg_delay:.4f}")
    if args.out is not None:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            experiments.write_solution_csv(result.solution, out / "solution.csv")
            experiments.write_curve_csv(result.curve, out / "curve.csv")
            learners.dump_q_store(result, out / "q_store.json")
        except OSError as exc:
            raise CliError(f"cannot write artifacts to {out}: {exc}", EXIT_IO)
    return 0 if result.solved else EXIT_INFEASIBLE


def cmd_evaluate(args) -> int:
    scenario = _load_scenario(args.scenario)
    try:
        delays = experiments.read_solution_csv(args.delays)
        metrics = experiments.run_metrics(scenario, delays)
    except (OSError, KeyError) as exc:
        raise CliError(f"cannot read delays {args.delays}: {exc}", EXIT_IO)
    except ValueError as exc:
        raise CliError(f"invalid assignment: {exc}", EXIT_VALIDATION)
    total = reward.global_reward(scenario, delays, _reward_params(args), _cost_table(args))
    print(f"remaining hotspots: {metrics.remaining_hotspots}")
    print(f"regulated flights: {metrics.regulated_flights}")
    print(f"total delay (regulated): {metrics.total_delay}")
    print(f"avg delay per flight: {metrics.avg_delay:.4f}")
    print(f"global reward: {total:.2f}")
    return 0 if metrics.solved else EXIT_INFEASIBLE


def cmd_oracle(args) -> int:
    scenario = _load_scenario(args.scenario)
    try:
        result = learners.brute_force_oracle(
            scenario, objective=args.objective, budget=args.budget,
            params=_reward_params(args), table=_cost_table(args),
        )
    except learners.OracleBudgetError as exc:
        raise CliError(str(exc), 1)
    if not result.feasible:
        print("infeasible: no zero-hotspot assignment within the delay limits")
        return EXIT_INFEASIBLE
    print(f"total delay: {result.total_delay}")
    print(f"objective value: {result.objective_value}")
    for fid in sorted(result.assignment):
        print(f"  {fid}: {result.assignment[fid]}")
    return 0


def cmd_experiment(args) -> int:
    scenario = _load_scenario(args.scenario)
    result = experiments.experiment(
        scenario, args.method, _learner_config(args), args.runs,
        params=_reward_params(args), table=_cost_table(args),
        out_dir=Path(args.out) if args.out else None, jobs=args.jobs,
    )
    solved = sum(1 for r in result.runs if r.solved)
    print(f"method: {args.method}, runs: {args.runs}, solved: {solved}/{args.runs}")
    for metric, s in result.stats.items():
        ks = "n/a" if s.ks_p_value is None else f"{s.ks_p_value:.4f}"
        print(f"{metric}: mean {s.mean:.4f} std {s.std:.4f} "
              f"median {s.median:.4f} ks-p {ks}")
    return 0 if result.all_solved else EXIT_INFEASIBLE


def cmd_sweep(args) -> int:
    scenario = _load_scenario(args.scenario)
    if args.flights:
        wanted = set(args.flights)
        known = {f.id for f in scenario.flights}
        missing = wanted - known
        if missing:
            raise CliError(f"unknown flights: {sorted(missing)}", EXIT_VALIDATION)
        selector = lambda f: f.id in wanted
    else:
        selector = lambda f: True
    summaries = experiments.cap_sweep(
        scenario, selector, args.caps, args.method, _learner_config(args),
        args.runs, params=_reward_params(args), table=_cost_table(args),
        out_dir=Path(args.out) if args.out else None, jobs=args.jobs,
    )
    for s in summaries:
        print(f"cap {s.cap}: mean remaining hotspots {s.mean_remaining_hotspots:.2f}, "
              f"mean avg delay {s.mean_avg_delay:.4f}, "
              f"solved all runs: {s.solved_all_runs}")
    return 0


def cmd_diagnose_reward(args) -> int:
    import random

    scenario = _load_scenario(args.scenario)
    fmap = scenario.flight_map()
    if args.flight not in fmap:
        raise CliError(f"unknown flight {args.flight!r}", EXIT_VALIDATION)
    params, table = _reward_params(args), _cost_table(args)
    rng = random.Random(args.seed)

    def random_assignment():
        return {f.id: rng.randint(0, f.max_delay) for f in scenario.flights}

    def pair_sampler():
        target = fmap[args.flight]
        while True:
            s = random_assignment()
            alt = dict(s)
            alt[args.flight] = rng.randint(0, target.max_delay)
            if alt[args.flight] != s[args.flight]:
                yield s, alt

    factored = reward.estimate_factoredness(
        scenario, args.flight, pair_sampler(), args.samples, params, table
    )
    state = random_assignment()
    try:
        learnable = reward.estimate_learnability(
            scenario, args.flight, state,
            (random_assignment() for _ in iter(int, 1)),
            args.samples, params, table,
        )
        print(f"factoredness: {factored:.4f}")
        print(f"learnability: {learnable.value:.4f} "
              f"({learnable.samples_used} used, {learnable.samples_excluded} excluded)")
    except reward.EstimatorError as exc:
        print(f"factoredness: {factored:.4f}")
        print(f"learnability: undefined ({exc})")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("DCB_MARL_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
