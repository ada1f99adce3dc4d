"""Episodic delay-assignment environment and the two tabular learners.

Each agent is a flight. Per step it either holds its current ground delay or
adds one minute. Independent learners (IRL) keep one Q-table per agent over
local states; edge-based collaborative learners (Ed-MARL) keep one Q-table
per coordination-graph edge over joint states and actions, sharing rewards
along edges. Agents with no neighbours hold deterministically and learn
nothing that step.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

from . import traffic
from .engine import (
    RENT,
    CompiledScenario,
    EpisodeState,
    SplitMix64,
    episode_seed,
    train_edmarl,
    train_irl,
    unpack_edge_q,
    unpack_irl_q,
)
from .model import DelayAssignment, Scenario, check_assignment
from .reward import RewardParams, StrategicCostTable, default_cost_table


class ContractViolation(ValueError):
    """An illegal action was submitted to the environment."""


class OracleBudgetError(ValueError):
    """The joint delay space exceeds the enumeration budget."""


class AgentAction(IntEnum):
    HOLD = 0
    INCREMENT = 1


class LocalState(NamedTuple):
    delay: int
    hotspot_count: int


@dataclass(frozen=True)
class LearnerConfig:
    alpha: float = 0.01
    gamma: float = 0.99
    episodes: int = 15000
    epsilon_start: float = 0.9
    epsilon_decrement: float = 0.01
    epsilon_interval: int = 120
    epsilon_zero_episode: int = 10800
    hotspot_cap: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must be in [0, 1]")


def epsilon_at(episode: int, cfg: LearnerConfig) -> float:
    """Exploration probability: start minus one decrement per interval,
    floored at zero and forced to zero from the pure-exploitation episode on.
    """
    if episode < 0:
        raise ValueError("episode must be non-negative")
    if episode >= cfg.epsilon_zero_episode:
        return 0.0
    return max(cfg.epsilon_start - cfg.epsilon_decrement * (episode // cfg.epsilon_interval), 0.0)


# --- single-agent (IRL) operations ---------------------------------------


def irl_select(
    state: LocalState,
    q: Dict[Tuple[LocalState, int], float],
    epsilon: float,
    rng: SplitMix64,
    legal: Sequence[int] = (AgentAction.HOLD, AgentAction.INCREMENT),
) -> int:
    """Epsilon-greedy over legal actions; ties break towards HOLD.

    A zero epsilon draws nothing, so the greedy tail of a schedule consumes
    no randomness.
    """
    if epsilon > 0.0 and rng.random() < epsilon:
        v = rng.random()
        return legal[int(v * len(legal))]
    best = legal[0]
    best_v = q.get((state, legal[0]), 0.0)
    for a in legal[1:]:
        v = q.get((state, a), 0.0)
        if v > best_v:
            best, best_v = a, v
    return best


def irl_update(
    q: Dict[Tuple[LocalState, int], float],
    s: LocalState,
    a: int,
    r: float,
    s_next: LocalState,
    cfg: LearnerConfig,
    terminal: bool,
    legal_next: Sequence[int] = (AgentAction.HOLD, AgentAction.INCREMENT),
) -> None:
    """One-step temporal-difference update; terminal steps bootstrap with 0."""
    boot = 0.0 if terminal else max(q.get((s_next, a2), 0.0) for a2 in legal_next)
    old = q.get((s, a), 0.0)
    q[(s, a)] = old + cfg.alpha * (r + cfg.gamma * boot - old)


# --- edge-based (Ed-MARL) operations --------------------------------------

Edge = Tuple[str, str]  # canonical: lower flight id first
EdgeQ = Dict[Edge, Dict[Tuple[LocalState, LocalState, int, int], float]]


def edge_key(i: str, j: str) -> Edge:
    return (i, j) if i < j else (j, i)


def _edge_value(
    edge_q: EdgeQ,
    i: str,
    j: str,
    s_i: LocalState,
    s_j: LocalState,
    a_i: int,
    legal_j: Sequence[int],
) -> float:
    """Max over the neighbour's legal actions of the edge's Q entry."""
    inner = edge_q.get(edge_key(i, j))
    if not inner:
        return 0.0
    if i < j:
        return max(inner.get((s_i, s_j, a_i, b), 0.0) for b in legal_j)
    return max(inner.get((s_j, s_i, b, a_i), 0.0) for b in legal_j)


def edmarl_agent_value(
    agent: str,
    state: LocalState,
    neighbour_states: Dict[str, LocalState],
    edge_q: EdgeQ,
    legal: Sequence[int],
    neighbour_legal: Dict[str, Sequence[int]],
) -> Dict[int, float]:
    """Per-own-action value: sum over neighbours of the optimistic edge max."""
    if not neighbour_states:
        raise ValueError(f"agent {agent} has no neighbours")
    values = {a: 0.0 for a in legal}
    for j in sorted(neighbour_states):
        s_j = neighbour_states[j]
        legal_j = neighbour_legal[j]
        for a in legal:
            values[a] += _edge_value(edge_q, agent, j, state, s_j, a, legal_j)
    return values


def edmarl_select(
    agent: str,
    state: LocalState,
    neighbour_states: Dict[str, LocalState],
    edge_q: EdgeQ,
    epsilon: float,
    rng: SplitMix64,
    legal: Sequence[int],
    neighbour_legal: Dict[str, Sequence[int]],
) -> int:
    if epsilon > 0.0 and rng.random() < epsilon:
        v = rng.random()
        return legal[int(v * len(legal))]
    values = edmarl_agent_value(agent, state, neighbour_states, edge_q, legal, neighbour_legal)
    best = legal[0]
    best_v = values[best]
    for a in legal[1:]:
        if values[a] > best_v:
            best, best_v = a, values[a]
    return best


def edmarl_update(
    edge_q: EdgeQ,
    edge: Edge,
    s_ij: Tuple[LocalState, LocalState],
    a_ij: Tuple[int, int],
    r_i: float,
    r_j: float,
    n_i: int,
    n_j: int,
    s_next_ij: Tuple[LocalState, LocalState],
    cfg: LearnerConfig,
    terminal: bool,
    legal_next: Tuple[Sequence[int], Sequence[int]] = ((0, 1), (0, 1)),
) -> None:
    """Shared-reward edge update; neighbourhood sizes include the agent itself."""
    inner = edge_q.setdefault(edge, {})
    if terminal:
        boot = 0.0
    else:
        s2i, s2j = s_next_ij
        boot = max(
            inner.get((s2i, s2j, a2, b2), 0.0)
            for a2 in legal_next[0]
            for b2 in legal_next[1]
        )
    key = (s_ij[0], s_ij[1], a_ij[0], a_ij[1])
    old = inner.get(key, 0.0)
    inner[key] = (1.0 - cfg.alpha) * old + cfg.alpha * (r_i / n_i + r_j / n_j + cfg.gamma * boot)


# --- environment -----------------------------------------------------------


class EnvStepResult(NamedTuple):
    delays: DelayAssignment
    states: Dict[str, LocalState]
    hotspots: List[traffic.Hotspot]
    rewards: Dict[str, float]
    graph: traffic.CoordinationGraph


def env_step(
    scenario: Scenario,
    delays: DelayAssignment,
    actions: Dict[str, int],
    params: Optional[RewardParams] = None,
    table: Optional[StrategicCostTable] = None,
    hotspot_cap: int = 10,
) -> EnvStepResult:
    """One joint transition, computed from first principles (reference path).

    Raises ContractViolation for an INCREMENT at max delay, by a
    non-regulatable flight, or by a flight with no neighbours.
    """
    from .reward import assignment_rewards

    params = params or RewardParams()
    table = table or default_cost_table()
    check_assignment(scenario, delays)
    pre_graph = traffic.build_graph(
        traffic.detect_hotspots(scenario, delays), [f.id for f in scenario.flights]
    )
    new_delays = dict(delays)
    for f in scenario.flights:
        a = actions.get(f.id, AgentAction.HOLD)
        if a == AgentAction.HOLD:
            continue
        if a != AgentAction.INCREMENT:
            raise ContractViolation(f"unknown action {a!r} for flight {f.id}")
        if not f.regulatable:
            raise ContractViolation(f"non-regulatable flight {f.id} cannot increment")
        if delays.get(f.id, 0) >= f.max_delay:
            raise ContractViolation(f"flight {f.id} already at max delay")
        if len(pre_graph.neighbours(f.id)) <= 1:
            raise ContractViolation(f"flight {f.id} has no neighbours and must hold")
        new_delays[f.id] = delays.get(f.id, 0) + 1
    hotspots = traffic.detect_hotspots(scenario, new_delays)
    graph = traffic.build_graph(hotspots, [f.id for f in scenario.flights])
    membership: Dict[str, int] = {}
    for h in hotspots:
        for fid in h.participants:
            membership[fid] = membership.get(fid, 0) + 1
    states = {
        f.id: LocalState(new_delays[f.id], min(membership.get(f.id, 0), hotspot_cap))
        for f in scenario.flights
    }
    rewards = assignment_rewards(scenario, new_delays, params, table)
    return EnvStepResult(new_delays, states, hotspots, rewards, graph)


# --- learners --------------------------------------------------------------


class IRLLearner:
    """One Q-table per agent over (local state, action)."""

    method = "irl"

    def __init__(self, cfg: LearnerConfig):
        self.cfg = cfg
        self.q: Dict[str, Dict[Tuple[LocalState, int], float]] = {}

    def table(self, fid: str) -> Dict[Tuple[LocalState, int], float]:
        return self.q.setdefault(fid, {})

    def select_action(self, ctx: "StepView", fid: str) -> int:
        return irl_select(
            ctx.states[fid], self.table(fid), ctx.epsilon, ctx.rng, ctx.legal[fid]
        )

    def update_step(self, ctx: "StepView") -> None:
        for fid in ctx.acting:
            irl_update(
                self.table(fid),
                ctx.states[fid],
                ctx.actions[fid],
                ctx.rewards[fid],
                ctx.post_states[fid],
                self.cfg,
                ctx.done[fid],
                ctx.post_legal[fid],
            )


class EdMARLLearner:
    """One Q-table per coordination-graph edge over joint states/actions."""

    method = "edmarl"

    def __init__(self, cfg: LearnerConfig):
        self.cfg = cfg
        self.q: EdgeQ = {}

    def select_action(self, ctx: "StepView", fid: str) -> int:
        neighbours = {j: ctx.states[j] for j in ctx.neighbourhoods[fid] if j != fid}
        neighbour_legal = {j: ctx.legal[j] for j in neighbours}
        return edmarl_select(
            fid,
            ctx.states[fid],
            neighbours,
            self.q,
            ctx.epsilon,
            ctx.rng,
            ctx.legal[fid],
            neighbour_legal,
        )

    def update_step(self, ctx: "StepView") -> None:
        for i, j in ctx.edges:
            edmarl_update(
                self.q,
                (i, j),
                (ctx.states[i], ctx.states[j]),
                (ctx.actions.get(i, 0), ctx.actions.get(j, 0)),
                ctx.rewards[i],
                ctx.rewards[j],
                ctx.post_neighbourhood_size[i],
                ctx.post_neighbourhood_size[j],
                (ctx.post_states[i], ctx.post_states[j]),
                self.cfg,
                ctx.done[i] or ctx.done[j],
                (ctx.post_legal[i], ctx.post_legal[j]),
            )


class ScriptedLearner:
    """Fixed policy, no learning; for tests and solution replay."""

    method = "scripted"

    def __init__(self, policy):
        self.policy = policy  # (flight id, LocalState, legal) -> action

    def select_action(self, ctx: "StepView", fid: str) -> int:
        return self.policy(fid, ctx.states[fid], ctx.legal[fid])

    def update_step(self, ctx: "StepView") -> None:
        pass


@dataclass
class StepView:
    """Everything a learner sees about one step."""

    epsilon: float
    rng: SplitMix64
    states: Dict[str, LocalState]
    legal: Dict[str, Tuple[int, ...]]
    neighbourhoods: Dict[str, frozenset]
    acting: List[str] = field(default_factory=list)
    actions: Dict[str, int] = field(default_factory=dict)
    rewards: Dict[str, float] = field(default_factory=dict)
    post_states: Dict[str, LocalState] = field(default_factory=dict)
    post_legal: Dict[str, Tuple[int, ...]] = field(default_factory=dict)
    edges: List[Tuple[str, str]] = field(default_factory=list)
    done: Dict[str, bool] = field(default_factory=dict)
    post_neighbourhood_size: Dict[str, int] = field(default_factory=dict)
    terminal: bool = False


class EpisodeResult(NamedTuple):
    final_delays: DelayAssignment
    hotspot_count: int
    returns: Dict[str, float]
    steps: int


def run_episode(
    scenario: Scenario,
    learner,
    cfg: LearnerConfig,
    episode_index: int,
    compiled: Optional[CompiledScenario] = None,
    params: Optional[RewardParams] = None,
    table: Optional[StrategicCostTable] = None,
) -> EpisodeResult:
    """One episode from all-zero delays until an all-HOLD step or the step
    budget; deterministic given (cfg.seed, episode_index).
    """
    cs = compiled or CompiledScenario(scenario, params, table, cfg.hotspot_cap)
    rng = SplitMix64(episode_seed(cfg.seed, episode_index))
    epsilon = epsilon_at(episode_index, cfg)
    st = EpisodeState(cs)
    n = cs.n
    returns = [0.0] * n
    counts, cells, nb, edges = st.hot_context()
    steps = 0
    for step in range(1, cs.budget + 1):
        steps = step
        ctx = StepView(
            epsilon=epsilon,
            rng=rng,
            states={
                cs.ids[i]: LocalState(st.delays[i], min(counts[i], cs.hotspot_cap))
                for i in sorted(nb)
            },
            legal={
                cs.ids[i]: (
                    (0, 1)
                    if cs.regulatable[i] and st.delays[i] < cs.max_delay[i]
                    else (0,)
                )
                for i in sorted(nb)
            },
            neighbourhoods={
                cs.ids[i]: frozenset(cs.ids[j] for j in nb[i]) for i in nb
            },
        )
        acting = [i for i in sorted(nb) if cs.regulatable[i] and len(nb[i]) > 1]
        ctx.acting = [cs.ids[i] for i in acting]
        any_inc = False
        for i in acting:
            a = learner.select_action(ctx, cs.ids[i])
            ctx.actions[cs.ids[i]] = a
            if a:
                any_inc = True
        for i in acting:
            if ctx.actions[cs.ids[i]]:
                st.apply_increment(i)
        # a congested agent pays its local reward scaled down to a per-step
        # rent, so values stay bounded while the sign landscape of the local
        # reward is preserved; clearing the last hotspot fixes the agent's
        # outcome and pays the full positive branch with zero bootstrap;
        # running out of steps is a truncation, not an outcome, so it
        # bootstraps normally; an all-HOLD step is a self-transition updated
        # like any other step, after which the episode ends
        stop = step == cs.budget or not any_inc
        ctx.terminal = stop
        counts2, cells2, nb2, edges2 = st.hot_context()
        participants = set(nb)
        for i in participants:
            fid = cs.ids[i]
            if i not in counts2:
                r = cs.pos[i][st.delays[i]]
                ctx.done[fid] = True
                ctx.post_neighbourhood_size[fid] = 1
            else:
                r = (-st.tdc(i, cells2[i]) * cs.rate - cs.lam[i][st.delays[i]]) * RENT
                ctx.done[fid] = False
                ctx.post_neighbourhood_size[fid] = len(nb2[i])
            ctx.rewards[fid] = r
            returns[i] += r
        ctx.post_states = {
            cs.ids[i]: LocalState(st.delays[i], min(counts2.get(i, 0), cs.hotspot_cap))
            for i in participants
        }
        ctx.post_legal = {
            cs.ids[i]: (
                (0, 1) if cs.regulatable[i] and st.delays[i] < cs.max_delay[i] else (0,)
            )
            for i in participants
        }
        ctx.edges = sorted(
            (cs.ids[e // n], cs.ids[e % n]) for e in edges
        )
        learner.update_step(ctx)
        if stop:
            break
        counts, cells, nb, edges = counts2, cells2, nb2, edges2
    return EpisodeResult(
        final_delays=cs.delays_dict(st.delays),
        hotspot_count=len(st.hot),
        returns={cs.ids[i]: returns[i] for i in range(n)},
        steps=steps,
    )


# --- training --------------------------------------------------------------


class CurvePoint(NamedTuple):
    episode: int
    epsilon: float
    hotspot_count: int
    avg_delay: float
    global_reward: float


@dataclass
class TrainResult:
    method: str
    solution: DelayAssignment
    solved: bool
    remaining_hotspots: int
    curve: List[CurvePoint]
    q_store: dict


def train(
    scenario: Scenario,
    method: str,
    cfg: LearnerConfig,
    params: Optional[RewardParams] = None,
    table: Optional[StrategicCostTable] = None,
    engine: str = "fast",
) -> TrainResult:
    """Run the full episodic protocol and return the final greedy solution.

    The solution is the final episode's assignment (the schedule puts the
    tail of training in the pure-exploitation phase). An unsolved case is a
    reported outcome, not an error.
    """
    if method not in ("irl", "edmarl"):
        raise ValueError(f"unknown method {method!r}")
    cs = CompiledScenario(scenario, params, table, cfg.hotspot_cap)
    if engine == "fast":
        if method == "irl":
            q, curve_rows, delays, _ = train_irl(cs, cfg)
            q_store = unpack_irl_q(cs, q)
        else:
            eq, curve_rows, delays, _ = train_edmarl(cs, cfg)
            q_store = unpack_edge_q(cs, eq)
        curve = [CurvePoint(*row) for row in curve_rows]
        solution = cs.delays_dict(delays)
    elif engine == "reference":
        learner = IRLLearner(cfg) if method == "irl" else EdMARLLearner(cfg)
        curve = []
        solution = {fid: 0 for fid in cs.ids}
        for ep in range(cfg.episodes):
            res = run_episode(scenario, learner, cfg, ep, compiled=cs)
            solution = res.final_delays
            avg = sum(d for d in solution.values() if d > 4) / max(cs.n, 1)
            from .reward import global_reward as _gr

            curve.append(
                CurvePoint(
                    ep,
                    epsilon_at(ep, cfg),
                    res.hotspot_count,
                    avg,
                    _gr(scenario, solution, cs.params, cs.table),
                )
            )
        q_store = learner.q
    else:
        raise ValueError(f"unknown engine {engine!r}")
    remaining = curve[-1].hotspot_count if curve else 0
    return TrainResult(
        method=method,
        solution=solution,
        solved=remaining == 0,
        remaining_hotspots=remaining,
        curve=curve,
        q_store=q_store,
    )


# --- brute-force oracle ----------------------------------------------------


class OracleResult(NamedTuple):
    feasible: bool
    assignment: Optional[DelayAssignment]
    total_delay: Optional[int]
    objective_value: Optional[float]


def brute_force_oracle(
    scenario: Scenario,
    objective: str = "total_delay",
    budget: int = 10_000_000,
    params: Optional[RewardParams] = None,
    table: Optional[StrategicCostTable] = None,
) -> OracleResult:
    """Exhaustive search over joint delays for a zero-hotspot optimum.

    Minimizes total delay (default) or the lambda-weighted strategic delay
    cost; ties go to the lexicographically smallest assignment in flight-id
    order. Infeasible problems are reported, not raised.
    """
    if objective not in ("total_delay", "weighted_cost"):
        raise ValueError(f"unknown objective {objective!r}")
    cs = CompiledScenario(scenario, params, table)
    ranges = [
        range(cs.max_delay[i] + 1) if cs.regulatable[i] else range(1)
        for i in range(cs.n)
    ]
    combos = math.prod(len(r) for r in ranges)
    if combos > budget:
        raise OracleBudgetError(
            f"{combos} joint assignments exceed the budget of {budget}"
        )
    caps = cs.cap
    occ = cs.occ
    ncells = len(caps)
    best = None
    best_obj = None
    for combo in itertools.product(*ranges):
        counts = [0] * ncells
        for i, d in enumerate(combo):
            for c in occ[i][d]:
                counts[c] += 1
        if any(counts[c] > caps[c] for c in range(ncells)):
            continue
        if objective == "total_delay":
            obj = float(sum(combo))
        else:
            obj = sum(cs.lam[i][d] for i, d in enumerate(combo))
        if best_obj is None or obj < best_obj:
            best, best_obj = combo, obj
    if best is None:
        return OracleResult(False, None, None, None)
    assignment = {cs.ids[i]: best[i] for i in range(cs.n)}
    return OracleResult(True, assignment, sum(best), best_obj)


# --- Q-store persistence ---------------------------------------------------

_QSTORE_VERSION = 1


def dump_q_store(result: TrainResult, path) -> None:
    """Versioned JSON snapshot of the learned tables, for later resumption."""
    doc: dict = {"version": _QSTORE_VERSION, "method": result.method}
    if result.method == "irl":
        doc["tables"] = {
            fid: {",".join(map(str, key)): val for key, val in entries.items()}
            for fid, entries in result.q_store.items()
        }
    else:
        doc["tables"] = {
            f"{i}|{j}": {",".join(map(str, key)): val for key, val in entries.items()}
            for (i, j), entries in result.q_store.items()
        }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_q_store(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != _QSTORE_VERSION:
        raise ValueError(f"unsupported Q-store version {doc.get('version')!r}")
    tables = {}
    for key, entries in doc["tables"].items():
        parsed = {
            tuple(int(x) for x in k.split(",")): v for k, v in entries.items()
        }
        if doc["method"] == "irl":
            tables[key] = parsed
        else:
            i, j = key.split("|")
            tables[(i, j)] = parsed
    return {"version": doc["version"], "method": doc["method"], "tables": tables}
