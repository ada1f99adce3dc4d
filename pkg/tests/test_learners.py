import pytest

from dcb_marl import (
    AgentAction,
    ConfigurationInterval,
    ContractViolation,
    FlightPlan,
    IRLLearner,
    LearnerConfig,
    LocalState,
    OracleBudgetError,
    Scenario,
    Sector,
    SectorCrossing,
    SplitMix64,
    apply_local_max_delay,
    brute_force_oracle,
    env_step,
    epsilon_at,
    run_episode,
    train,
    zero_delays,
)
from dcb_marl.learners import (
    ScriptedLearner,
    dump_q_store,
    edmarl_agent_value,
    edmarl_update,
    irl_select,
    irl_update,
    load_q_store,
)

CFG = LearnerConfig()


class TestEpsilonSchedule:
    def test_exact_values(self):
        assert epsilon_at(0, CFG) == 0.9
        assert epsilon_at(119, CFG) == 0.9
        assert epsilon_at(120, CFG) == pytest.approx(0.89)
        assert epsilon_at(1200, CFG) == pytest.approx(0.80)
        assert epsilon_at(10799, CFG) == pytest.approx(0.01)

    def test_zero_from_pure_exploitation_episode(self):
        assert epsilon_at(10800, CFG) == 0.0
        assert epsilon_at(14999, CFG) == 0.0

    def test_never_negative(self):
        cfg = LearnerConfig(epsilon_start=0.1, epsilon_zero_episode=10**9)
        assert epsilon_at(100 * cfg.epsilon_interval, cfg) == 0.0

    def test_negative_episode_rejected(self):
        with pytest.raises(ValueError):
            epsilon_at(-1, CFG)


class TestLearnerConfig:
    def test_alpha_bounds(self):
        with pytest.raises(ValueError):
            LearnerConfig(alpha=0.0)
        with pytest.raises(ValueError):
            LearnerConfig(alpha=1.5)

    def test_gamma_bounds(self):
        with pytest.raises(ValueError):
            LearnerConfig(gamma=-0.1)


class TestIrlSelect:
    def test_greedy_picks_best_action(self):
        s = LocalState(0, 1)
        q = {(s, 0): -1.0, (s, 1): 2.0}
        assert irl_select(s, q, 0.0, SplitMix64(1)) == AgentAction.INCREMENT

    def test_tie_breaks_towards_hold(self):
        s = LocalState(0, 1)
        assert irl_select(s, {}, 0.0, SplitMix64(1)) == AgentAction.HOLD
        q = {(s, 0): 3.0, (s, 1): 3.0}
        assert irl_select(s, q, 0.0, SplitMix64(1)) == AgentAction.HOLD

    def test_pure_exploration_is_roughly_uniform(self):
        s = LocalState(0, 1)
        rng = SplitMix64(42)
        picks = [irl_select(s, {}, 1.0, rng) for _ in range(2000)]
        increments = sum(picks)
        assert 850 < increments < 1150

    def test_zero_epsilon_consumes_no_randomness(self):
        rng_a, rng_b = SplitMix64(7), SplitMix64(7)
        irl_select(LocalState(0, 1), {}, 0.0, rng_a)
        assert rng_a.random() == rng_b.random()

    def test_restricted_legal_set(self):
        s = LocalState(10, 1)
        q = {(s, 1): 99.0}
        assert irl_select(s, q, 0.0, SplitMix64(1), legal=(0,)) == AgentAction.HOLD


class TestIrlUpdate:
    def test_first_update_from_zero_table(self):
        q = {}
        s, s2 = LocalState(0, 1), LocalState(0, 1)
        irl_update(q, s, 0, -729.0, s2, CFG, terminal=False)
        assert q[(s, 0)] == pytest.approx(-7.29)

    def test_terminal_ignores_next_state_values(self):
        s, s2 = LocalState(9, 1), LocalState(10, 0)
        q = {(s2, 0): 50.0, (s2, 1): 80.0}
        irl_update(q, s, 1, 10.0, s2, CFG, terminal=True)
        assert q[(s, 1)] == pytest.approx(0.1)

    def test_bootstrap_uses_max_over_legal_next_actions(self):
        s, s2 = LocalState(0, 1), LocalState(1, 1)
        q = {(s2, 0): 5.0, (s2, 1): 7.0}
        irl_update(q, s, 1, 0.0, s2, CFG, terminal=False, legal_next=(0,))
        assert q[(s, 1)] == pytest.approx(0.01 * 0.99 * 5.0)

    def test_closed_form_against_manual_arithmetic(self):
        s, s2 = LocalState(3, 2), LocalState(4, 1)
        q = {(s, 1): -2.5, (s2, 0): 1.0, (s2, 1): 4.0}
        irl_update(q, s, 1, -81.0, s2, CFG, terminal=False)
        expected = -2.5 + 0.01 * (-81.0 + 0.99 * 4.0 - (-2.5))
        assert q[(s, 1)] == pytest.approx(expected, rel=1e-12)


class TestEdmarlAgentValue:
    def test_optimistic_max_over_neighbour_actions(self):
        s = LocalState(0, 1)
        eq = {("a", "b"): {(s, s, 0, 0): 1.0, (s, s, 0, 1): 2.0, (s, s, 1, 0): 0.0, (s, s, 1, 1): 3.0}}
        values = edmarl_agent_value(
            "a", s, {"b": s}, eq, (0, 1), {"b": (0, 1)}
        )
        assert values == {0: 2.0, 1: 3.0}

    def test_orientation_is_canonical(self):
        # The same table read from the other endpoint swaps the key roles.
        s = LocalState(0, 1)
        eq = {("a", "b"): {(s, s, 0, 1): 7.0}}
        values = edmarl_agent_value("b", s, {"a": s}, eq, (0, 1), {"a": (0, 1)})
        assert values == {0: 0.0, 1: 7.0}

    def test_values_sum_over_neighbours(self):
        s = LocalState(0, 1)
        eq = {
            ("a", "b"): {(s, s, 1, 0): 2.0},
            ("a", "c"): {(s, s, 1, 1): 5.0},
        }
        values = edmarl_agent_value(
            "a", s, {"b": s, "c": s}, eq, (0, 1), {"b": (0, 1), "c": (0, 1)}
        )
        assert values[1] == pytest.approx(7.0)

    def test_unseen_edges_default_to_zero(self):
        s = LocalState(2, 1)
        values = edmarl_agent_value("a", s, {"b": s}, {}, (0, 1), {"b": (0, 1)})
        assert values == {0: 0.0, 1: 0.0}

    def test_no_neighbours_rejected(self):
        with pytest.raises(ValueError):
            edmarl_agent_value("a", LocalState(0, 1), {}, {}, (0, 1), {})


class TestEdmarlUpdate:
    def test_shared_reward_divides_by_neighbourhood_sizes(self):
        # Both endpoints in a 3-agent neighbourhood paying -729 each:
        # 0.01 * (-243 - 243) = -4.86.
        eq = {}
        s = LocalState(0, 1)
        edmarl_update(
            eq, ("a", "b"), (s, s), (0, 0), -729.0, -729.0, 3, 3, (s, s), CFG, True
        )
        assert eq[("a", "b")][(s, s, 0, 0)] == pytest.approx(-4.86)

    def test_closed_form_with_bootstrap(self):
        s, s2 = LocalState(0, 1), LocalState(1, 1)
        eq = {("a", "b"): {(s2, s2, 0, 0): 2.0, (s2, s2, 1, 1): 6.0, (s, s, 1, 0): -1.0}}
        edmarl_update(
            eq, ("a", "b"), (s, s), (1, 0), -81.0, 30.0, 3, 2, (s2, s2), CFG, False
        )
        expected = 0.99 * -1.0 + 0.01 * (-81.0 / 3 + 30.0 / 2 + 0.99 * 6.0)
        assert eq[("a", "b")][(s, s, 1, 0)] == pytest.approx(expected, rel=1e-12)

    def test_bootstrap_respects_restricted_legal_actions(self):
        s, s2 = LocalState(0, 1), LocalState(1, 1)
        eq = {("a", "b"): {(s2, s2, 0, 0): 2.0, (s2, s2, 1, 1): 6.0}}
        edmarl_update(
            eq,
            ("a", "b"),
            (s, s),
            (0, 0),
            0.0,
            0.0,
            1,
            1,
            (s2, s2),
            CFG,
            False,
            legal_next=((0,), (0,)),
        )
        assert eq[("a", "b")][(s, s, 0, 0)] == pytest.approx(0.01 * 0.99 * 2.0)


class TestEnvStep:
    def test_all_hold_reports_states_and_rewards(self, tiny):
        res = env_step(tiny, zero_delays(tiny), {})
        assert res.delays == zero_delays(tiny)
        assert res.states == {
            "f1": LocalState(0, 1),
            "f2": LocalState(0, 1),
            "f3": LocalState(0, 1),
        }
        assert res.rewards["f3"] == pytest.approx(-729.0)
        assert res.rewards["f1"] == pytest.approx(-810.0)
        assert len(res.hotspots) == 1
        assert res.graph.neighbours("f1") == {"f1", "f2", "f3"}

    def test_increment_advances_one_minute(self, tiny):
        res = env_step(tiny, zero_delays(tiny), {"f3": AgentAction.INCREMENT})
        assert res.delays == {"f1": 0, "f2": 0, "f3": 1}

    def test_increment_at_max_delay_rejected(self, tiny):
        delays = {"f1": 0, "f2": 0, "f3": 10}
        sc = apply_local_max_delay(tiny, lambda f: False, 0)
        with pytest.raises(ContractViolation):
            env_step(sc, delays, {"f3": AgentAction.INCREMENT})

    def test_non_regulatable_increment_rejected(self):
        sc = Scenario(
            sectors=(Sector("A", 0),),
            timeline=(ConfigurationInterval(0, 60, {"A": "A"}),),
            flights=(
                FlightPlan("f1", (SectorCrossing("A", 5, 10),), 10, regulatable=False),
                FlightPlan("f2", (SectorCrossing("A", 6, 12),), 10),
            ),
            horizon=60,
            period_duration=60,
            period_step=60,
        )
        with pytest.raises(ContractViolation):
            env_step(sc, zero_delays(sc), {"f1": AgentAction.INCREMENT})

    def test_increment_without_neighbours_rejected(self, tiny):
        # (0, 0, 10) clears the hotspot, so nobody has neighbours.
        with pytest.raises(ContractViolation):
            env_step(tiny, {"f1": 0, "f2": 0, "f3": 10}, {"f1": AgentAction.INCREMENT})

    def test_unknown_action_rejected(self, tiny):
        with pytest.raises(ContractViolation):
            env_step(tiny, zero_delays(tiny), {"f1": 7})

    def test_hotspot_count_saturates_at_cap(self, tiny):
        res = env_step(tiny, zero_delays(tiny), {}, hotspot_cap=0)
        assert res.states["f1"].hotspot_count == 0


class TestRunEpisode:
    def test_scripted_delay_of_f3_solves_tiny3(self, tiny):
        learner = ScriptedLearner(
            lambda fid, state, legal: 1 if fid == "f3" and 1 in legal else 0
        )
        res = run_episode(tiny, learner, CFG, episode_index=0)
        assert res.final_delays == {"f1": 0, "f2": 0, "f3": 10}
        assert res.hotspot_count == 0
        assert res.steps == 10

    def test_zero_table_greedy_episode_holds_and_stops(self, tiny):
        cfg = LearnerConfig(epsilon_start=0.0)
        res = run_episode(tiny, IRLLearner(cfg), cfg, episode_index=0)
        assert res.final_delays == zero_delays(tiny)
        assert res.hotspot_count == 1
        assert res.steps == 1

    def test_deterministic_given_seed_and_episode(self, tiny):
        a = run_episode(tiny, IRLLearner(CFG), CFG, episode_index=5)
        b = run_episode(tiny, IRLLearner(CFG), CFG, episode_index=5)
        assert a == b

    def test_episodes_differ_across_indices(self, tiny):
        a = run_episode(tiny, IRLLearner(CFG), CFG, episode_index=1)
        b = run_episode(tiny, IRLLearner(CFG), CFG, episode_index=2)
        assert a.final_delays != b.final_delays or a.returns != b.returns


def hotspot_plus_bystander():
    """Two flights share a hotspot; a third flies alone in another sector."""
    return Scenario(
        sectors=(Sector("A", 1), Sector("B", 5)),
        timeline=(ConfigurationInterval(0, 120, {"A": "A", "B": "B"}),),
        flights=(
            FlightPlan("f1", (SectorCrossing("A", 0, 10),), 20, "light"),
            FlightPlan("f2", (SectorCrossing("A", 5, 12),), 20, "light"),
            FlightPlan("f_iso", (SectorCrossing("B", 0, 10),), 20, "light"),
        ),
        horizon=120,
        period_duration=15,
        period_step=15,
    )


class TestTrain:
    def test_unknown_method_rejected(self, tiny):
        with pytest.raises(ValueError):
            train(tiny, "sarsa", CFG)

    def test_unknown_engine_rejected(self, tiny):
        with pytest.raises(ValueError):
            train(tiny, "irl", CFG, engine="quantum")

    def test_no_hotspot_scenario_is_immediately_solved(self):
        sc = Scenario(
            sectors=(Sector("A", 5),),
            timeline=(ConfigurationInterval(0, 60, {"A": "A"}),),
            flights=(FlightPlan("f1", (SectorCrossing("A", 5, 10),), 10),),
            horizon=60,
            period_duration=60,
            period_step=60,
        )
        cfg = LearnerConfig(episodes=30)
        res = train(sc, "irl", cfg)
        assert res.solved
        assert res.solution == {"f1": 0}
        assert len(res.curve) == 30
        assert all(p.hotspot_count == 0 for p in res.curve)

    def test_flight_outside_every_hotspot_never_learns_or_moves(self):
        sc = hotspot_plus_bystander()
        cfg = LearnerConfig(episodes=200)
        for method in ("irl", "edmarl"):
            res = train(sc, method, cfg)
            assert res.solution["f_iso"] == 0
            if method == "irl":
                assert not res.q_store.get("f_iso")
            else:
                assert not any("f_iso" in edge for edge in res.q_store)

    def test_curve_records_schedule_epsilon(self, tiny):
        cfg = LearnerConfig(episodes=5)
        res = train(tiny, "irl", cfg)
        assert [p.episode for p in res.curve] == [0, 1, 2, 3, 4]
        assert all(p.epsilon == 0.9 for p in res.curve)


def normalize_irl(tables):
    out = {}
    for fid, entries in tables.items():
        flat = {}
        for key, val in entries.items():
            if len(key) == 2:  # (LocalState, action) from the reference path
                (d, h), a = key
                flat[(d, h, a)] = val
            else:
                flat[key] = val
        out[fid] = {k: v for k, v in flat.items() if abs(v) > 1e-15}
    return out


def normalize_edges(tables):
    out = {}
    for edge, entries in tables.items():
        flat = {}
        for key, val in entries.items():
            if len(key) == 4:  # (s_i, s_j, a_i, a_j) from the reference path
                (di, hi), (dj, hj), ai, aj = key
                flat[(di, hi, dj, hj, ai, aj)] = val
            else:
                flat[key] = val
        out[edge] = {k: v for k, v in flat.items() if abs(v) > 1e-15}
    return out


class TestEngineEquivalence:
    @pytest.mark.parametrize("method", ["irl", "edmarl"])
    def test_fast_engine_matches_reference(self, tiny, method):
        cfg = LearnerConfig(episodes=200, seed=3)
        fast = train(tiny, method, cfg, engine="fast")
        ref = train(tiny, method, cfg, engine="reference")
        assert fast.solution == ref.solution
        assert fast.solved == ref.solved
        assert len(fast.curve) == len(ref.curve)
        for a, b in zip(fast.curve, ref.curve):
            assert a.episode == b.episode
            assert a.hotspot_count == b.hotspot_count
            assert a.avg_delay == pytest.approx(b.avg_delay)
        norm = normalize_irl if method == "irl" else normalize_edges
        fq, rq = norm(fast.q_store), norm(ref.q_store)
        assert set(fq) == set(rq)
        for key in fq:
            assert set(fq[key]) == set(rq[key])
            for entry in fq[key]:
                assert fq[key][entry] == pytest.approx(rq[key][entry], abs=1e-9)


class TestOracle:
    def test_tiny3_optimum(self, tiny):
        res = brute_force_oracle(tiny)
        assert res.feasible
        assert res.assignment == {"f1": 0, "f2": 0, "f3": 10}
        assert res.total_delay == 10
        assert res.objective_value == 10.0

    def test_weighted_cost_objective_also_delays_f3(self, tiny):
        res = brute_force_oracle(tiny, objective="weighted_cost")
        assert res.assignment == {"f1": 0, "f2": 0, "f3": 10}
        assert res.objective_value == pytest.approx(20.0 * 0.1)

    def test_no_hotspot_scenario_needs_no_delay(self, tiny):
        relaxed = Scenario(
            sectors=(Sector("S1", 3),),
            timeline=tiny.timeline,
            flights=tiny.flights,
            horizon=tiny.horizon,
            period_duration=tiny.period_duration,
            period_step=tiny.period_step,
        )
        res = brute_force_oracle(relaxed)
        assert res.feasible and res.total_delay == 0
        assert res.assignment == zero_delays(relaxed)

    def test_insufficient_max_delay_is_infeasible(self, tiny):
        capped = apply_local_max_delay(tiny, lambda f: True, 5)
        res = brute_force_oracle(capped)
        assert res == (False, None, None, None)

    def test_budget_overflow_raises(self, tiny):
        with pytest.raises(OracleBudgetError):
            brute_force_oracle(tiny, budget=100)

    def test_unknown_objective_rejected(self, tiny):
        with pytest.raises(ValueError):
            brute_force_oracle(tiny, objective="makespan")

    def test_non_regulatable_flights_pinned_at_zero(self):
        sc = hotspot_plus_bystander()
        pinned = Scenario(
            sectors=sc.sectors,
            timeline=sc.timeline,
            flights=(
                sc.flights[0],
                FlightPlan("f2", sc.flights[1].crossings, 20, "light", regulatable=False),
                sc.flights[2],
            ),
            horizon=sc.horizon,
            period_duration=sc.period_duration,
            period_step=sc.period_step,
        )
        res = brute_force_oracle(pinned)
        assert res.feasible
        assert res.assignment["f2"] == 0
        assert res.assignment["f1"] > 0


class TestQStorePersistence:
    @pytest.mark.parametrize("method", ["irl", "edmarl"])
    def test_round_trip(self, tiny, tmp_path, method):
        cfg = LearnerConfig(episodes=40)
        res = train(tiny, method, cfg)
        path = tmp_path / "q.json"
        dump_q_store(res, path)
        loaded = load_q_store(path)
        assert loaded["method"] == method
        assert loaded["tables"] == res.q_store

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "q.json"
        path.write_text('{"version": 99, "method": "irl", "tables": {}}')
        with pytest.raises(ValueError):
            load_q_store(path)
