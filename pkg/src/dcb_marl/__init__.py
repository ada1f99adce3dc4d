"""Demand-capacity balancing of air traffic by multiagent tabular RL.

Flights are agents that assign themselves ground delays to eliminate
sector-capacity hotspots. Two learners are provided: independent Q-learning
and edge-based collaborative Q-learning over the dynamic coordination graph
of flights that share hotspots.
"""

from .engine import CompiledScenario, SplitMix64
from .experiments import (
    AggregateStats,
    RunMetrics,
    aggregate,
    cap_sweep,
    degree_of_difficulty,
    experiment,
    run_metrics,
)
from .generate import GenerationError, GeneratorParams, generate_scenario, greedy_repair
from .learners import (
    AgentAction,
    ContractViolation,
    EdMARLLearner,
    IRLLearner,
    LearnerConfig,
    LocalState,
    OracleBudgetError,
    TrainResult,
    brute_force_oracle,
    env_step,
    epsilon_at,
    run_episode,
    train,
)
from .model import (
    ConfigurationInterval,
    FlightPlan,
    OutOfHorizonError,
    Scenario,
    Sector,
    SectorCrossing,
    apply_local_max_delay,
    load_scenario,
    resolve_crossings,
    save_scenario,
    tiny3,
    validate_scenario,
    zero_delays,
)
from .reward import (
    RewardParams,
    StrategicCostTable,
    default_cost_table,
    estimate_factoredness,
    estimate_learnability,
    global_reward,
    local_reward,
)
from .traffic import (
    CoordinationGraph,
    Hotspot,
    build_graph,
    compute_demand,
    congested_duration,
    counting_periods,
    detect_hotspots,
)

__version__ = "0.1.0"

__all__ = [
    "AgentAction",
    "AggregateStats",
    "CompiledScenario",
    "ConfigurationInterval",
    "ContractViolation",
    "CoordinationGraph",
    "EdMARLLearner",
    "FlightPlan",
    "GenerationError",
    "GeneratorParams",
    "Hotspot",
    "IRLLearner",
    "LearnerConfig",
    "LocalState",
    "OracleBudgetError",
    "OutOfHorizonError",
    "RewardParams",
    "RunMetrics",
    "Scenario",
    "Sector",
    "SectorCrossing",
    "SplitMix64",
    "StrategicCostTable",
    "TrainResult",
    "aggregate",
    "apply_local_max_delay",
    "brute_force_oracle",
    "build_graph",
    "cap_sweep",
    "compute_demand",
    "congested_duration",
    "counting_periods",
    "default_cost_table",
    "degree_of_difficulty",
    "detect_hotspots",
    "env_step",
    "epsilon_at",
    "estimate_factoredness",
    "estimate_learnability",
    "experiment",
    "generate_scenario",
    "global_reward",
    "greedy_repair",
    "load_scenario",
    "local_reward",
    "resolve_crossings",
    "run_episode",
    "run_metrics",
    "save_scenario",
    "tiny3",
    "train",
    "validate_scenario",
    "zero_delays",
]
