"""TOML configuration: defaults, loading, validation and provenance hash.

Every tunable default of the planner, risk model, reward, and trainer
lives in one nested table (mirrored by ``configs/default.toml``).  A user
file overrides individual keys; unknown keys are rejected with their full
dotted path.  The resolved config is hashed (short sha256 of canonical
JSON) and the hash is embedded in checkpoints and reports.
"""

import hashlib
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .costs import CostWeights
from .env import RewardConfig
from .policy import PolicySpec
from .ppo import Hyperparams
from .risk import HarmParams
from .simulation import PlannerSettings


class ConfigError(ValueError):
    """Raised for unknown keys or malformed config files."""


_DEFAULTS = {
    "planner": {
        "dt": 0.1,
        "horizon": 3.0,
        "terminal_times": [1.0, 1.5, 2.0, 2.5, 3.0],
        "n_velocities": 8,
        "velocity_span": 4.0,
        "lateral_limit": 3.5,
        "n_lateral": 20,
    },
    "prediction": {
        "sigma0_sq": 0.04,
        "growth": 0.1,
    },
    "harm": {
        "slope": 0.25,
        "offset": 5.0,
        "ego_mass": 1500.0,
        "obstacle_mass": 1500.0,
    },
    "costs": {
        "collision_prob": 1.0,
        "jerk_lat": 0.2,
        "jerk_lon": 0.2,
        "dist_ref": 1.0,
        "velocity_offset": 1.0,
        "bound_factor": 5.0,
        "action_factor": 0.5,
    },
    "reward": {
        "goal_reached": 15.0,
        "goal_faster": 12.0,
        "goal_slower": 6.0,
        "collision": -20.0,
        "no_feasible": -10.0,
        "timeout": -10.0,
        "dist_ref": 0.05,
        "velocity_diff": 0.05,
        "s_progress": 0.2,
        "action_regulation": 0.05,
        "ego_risk": 5.0,
        "obstacle_risk": 5.0,
    },
    "env": {
        "weight_reset": "per_episode",
        "sample_mode": "round_robin",
    },
    "ppo": {
        "learning_rate": 3e-4,
        "clip_epsilon": 0.1,
        "gamma": 0.99,
        "gae_lambda": 0.97,
        "batch_size": 2352,
        "epochs": 5,
        "entropy_coef": 0.01,
        "value_coef": 0.5,
        "rollout_length": 294,
        "n_envs": 8,
        "total_timesteps": 200_000,
        "max_grad_norm": 0.5,
    },
    "policy": {
        "hidden": [64, 64],
        "recurrent": False,
        "lstm_hidden": 64,
    },
    "train": {
        "eval_every": 1,
        "split_train": 0.75,
        "split_val": 0.15,
    },
    "bench": {
        "workers": 1,
    },
}


def _merge(defaults: dict, overrides: dict, prefix: str = "") -> dict:
    merged = {}
    for key, default in defaults.items():
        merged[key] = default
    for key, value in overrides.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key {path!r}")
        default = defaults[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a table")
            merged[key] = _merge(default, value, prefix=f"{path}.")
        else:
            if isinstance(default, bool) != isinstance(value, bool):
                raise ConfigError(f"config key {path!r} has the wrong type")
            if isinstance(default, float) and isinstance(value, int):
                value = float(value)
            if type(default) is not type(value) and not isinstance(default, list):
                raise ConfigError(
                    f"config key {path!r} expects {type(default).__name__}"
                )
            merged[key] = value
    return merged


class Config:
    """Resolved configuration with typed builders for each subsystem."""

    def __init__(self, data: dict):
        self.data = data

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    @property
    def hash(self) -> str:
        canonical = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def harm_params(self) -> HarmParams:
        h = self.data["harm"]
        return HarmParams(
            slope=h["slope"],
            offset=h["offset"],
            ego_mass=h["ego_mass"],
            obstacle_mass=h["obstacle_mass"],
        )

    def planner_settings(self) -> PlannerSettings:
        p = self.data["planner"]
        pred = self.data["prediction"]
        return PlannerSettings(
            dt=p["dt"],
            horizon=p["horizon"],
            terminal_times=tuple(p["terminal_times"]),
            n_velocities=p["n_velocities"],
            velocity_span=p["velocity_span"],
            lateral_limit=p["lateral_limit"],
            n_lateral=p["n_lateral"],
            prediction_sigma0_sq=pred["sigma0_sq"],
            prediction_growth=pred["growth"],
            harm=self.harm_params(),
        )

    def cost_weights(self) -> CostWeights:
        c = dict(self.data["costs"])
        bound = c.pop("bound_factor")
        action = c.pop("action_factor")
        return CostWeights.from_config(c, bound_factor=bound, action_factor=action)

    def reward_config(self) -> RewardConfig:
        return RewardConfig(**self.data["reward"])

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(**self.data["ppo"])

    def policy_spec(self) -> PolicySpec:
        p = self.data["policy"]
        return PolicySpec(
            hidden=tuple(p["hidden"]),
            recurrent=p["recurrent"],
            lstm_hidden=p["lstm_hidden"],
        )


def default_config() -> Config:
    return Config(json.loads(json.dumps(_DEFAULTS)))


def load_config(path=None) -> Config:
    """Load a TOML file over the defaults; ``None`` gives pure defaults."""
    if path is None:
        return default_config()
    with open(path, "rb") as handle:
        try:
            overrides = tomllib.load(handle)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return Config(_merge(_DEFAULTS, overrides))
