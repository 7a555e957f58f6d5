"""Seeded slotted-time simulator for decentralized multi-user channel
allocation, with epoch-based estimate / explore-exploit / detect agents,
known-N and uniform-random baselines, and a regret metrics suite."""

from .agent import (
    E3drAgent,
    E3drParams,
    compute_detect_duration,
    compute_or_duration,
    detect_assignment,
    detect_phase_len,
)
from .baselines import McTopMKnownNAgent, UniformRandomAgent
from .env import (
    Action,
    ChannelProcess,
    Environment,
    Observation,
    PopulationEvent,
    PopulationSchedule,
    idle,
    sense,
    transmit,
)
from .harness import (
    ChannelSpec,
    ConfigError,
    ExperimentConfig,
    OutputSpec,
    bound_params_for,
    load_config,
    run_experiment,
    run_one,
    scenario,
    write_outputs,
)
from .metrics import (
    BoundParams,
    RunTrace,
    SlotRecord,
    collision_bound,
    collision_count,
    optimal_rate,
    pseudo_regret,
    regret_bound,
)
from .sim import SimResult, simulate

__version__ = "0.1.0"
