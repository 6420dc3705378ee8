"""Frenet-frame trajectory sampling with a learned cost-weight tuner.

The planner generates a bundle of polynomial trajectory candidates in the
curvilinear frame of a reference path, filters them against kinematic
limits, scores them with a weighted cost, and picks the cheapest
collision-free sample.  A small PPO agent can adjust the cost weights
online; the environment, training loop, and benchmark harness live in the
submodules.
"""

__version__ = "0.1.0"

from .costs import DEFAULT_WEIGHTS, TERM_ORDER, CostWeights, apply_weight_action
from .env import OBSERVATION_DIM, PlannerEnv, RewardConfig, build_observation
from .geometry import (
    CartesianState,
    FrenetState,
    OutOfPathError,
    ReferencePath,
    build_reference_path,
    cartesian_to_frenet,
    frenet_to_cartesian,
)
from .policy import GaussianPolicy, PolicySpec
from .ppo import Hyperparams, load_checkpoint, save_checkpoint, train
from .risk import HarmParams, predict_constant_velocity
from .sampling import (
    TrajectoryBundle,
    TrajectorySample,
    VehicleParams,
    generate_bundle,
)
from .scenario import (
    Scenario,
    ScenarioFormatError,
    generate_corpus,
    load_scenario,
    save_scenario,
    split_corpus,
)
from .simulation import (
    EpisodeResult,
    PlannerSettings,
    SimState,
    TerminationStatus,
    init_sim,
    plan_step,
    run_default_episode,
)

__all__ = [
    "CartesianState",
    "CostWeights",
    "DEFAULT_WEIGHTS",
    "EpisodeResult",
    "FrenetState",
    "GaussianPolicy",
    "HarmParams",
    "Hyperparams",
    "OBSERVATION_DIM",
    "OutOfPathError",
    "PlannerEnv",
    "PlannerSettings",
    "PolicySpec",
    "ReferencePath",
    "RewardConfig",
    "Scenario",
    "ScenarioFormatError",
    "SimState",
    "TERM_ORDER",
    "TerminationStatus",
    "TrajectoryBundle",
    "TrajectorySample",
    "VehicleParams",
    "apply_weight_action",
    "build_observation",
    "build_reference_path",
    "cartesian_to_frenet",
    "frenet_to_cartesian",
    "generate_bundle",
    "generate_corpus",
    "init_sim",
    "load_checkpoint",
    "load_scenario",
    "plan_step",
    "predict_constant_velocity",
    "run_default_episode",
    "save_checkpoint",
    "save_scenario",
    "split_corpus",
    "train",
]
