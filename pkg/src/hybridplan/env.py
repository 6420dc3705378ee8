"""Learning-environment adapter around the closed-loop planner.

The agent does not drive: its 5-dimensional action in [-1, 1] nudges the
planner's cost weights each step, the planner picks the trajectory.  The
environment exposes a fixed 57-channel observation (ego motion, goal
progress, surrounding traffic, bundle statistics, and a boundary cost grid
built from the outermost lateral samples of each terminal-time group), and
a hybrid reward of sparse termination payouts plus dense shaping.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .costs import TERM_ORDER, CostWeights, apply_weight_action
from .geometry import OutOfPathError, project_to_path, wrap_angle
from .sampling import TrajectoryBundle
from .scenario import Scenario
from .simulation import (
    PlannerSettings,
    SimState,
    TerminationStatus,
    advance,
    check_termination,
    init_sim,
    plan_step,
)

OBSERVATION_DIM = 57
N_OBSTACLE_SLOTS = 6

VELOCITY_SCALE = 10.0
DISTANCE_SCALE = 50.0
COST_SCALE = 100.0
OBS_CLIP = 10.0

WEIGHT_RESET_MODES = ("per_episode", "per_step")


@dataclass(frozen=True)
class RewardConfig:
    """Sparse termination payouts and dense shaping coefficients."""

    goal_reached: float = 15.0
    goal_faster: float = 12.0
    goal_slower: float = 6.0
    collision: float = -20.0
    no_feasible: float = -10.0
    timeout: float = -10.0
    dist_ref: float = 0.05
    velocity_diff: float = 0.05
    s_progress: float = 0.2
    action_regulation: float = 0.05
    ego_risk: float = 5.0
    obstacle_risk: float = 5.0

    def __post_init__(self):
        if self.goal_reached < 0.0:
            raise ValueError("goal_reached payout must be >= 0")
        for name in ("collision", "no_feasible", "timeout"):
            if getattr(self, name) > 0.0:
                raise ValueError(f"{name} payout must be <= 0")

    def sparse(self, status) -> float:
        if status is None:
            return 0.0
        return {
            TerminationStatus.RUNNING: 0.0,
            TerminationStatus.GOAL_REACHED_IN_TIME: self.goal_reached,
            TerminationStatus.GOAL_REACHED_FASTER: self.goal_faster,
            TerminationStatus.GOAL_REACHED_SLOWER: self.goal_slower,
            TerminationStatus.COLLISION: self.collision,
            TerminationStatus.NO_FEASIBLE_TRAJECTORY: self.no_feasible,
            TerminationStatus.TIMEOUT: self.timeout,
        }[status]


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: bool
    termination_status: TerminationStatus = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.terminated != (self.termination_status is not None):
            raise ValueError("terminated flag must match status presence")


def _adjacency_channels(scenario: Scenario):
    codes = {"same": 1.0, "opposite": -1.0, None: 0.0}
    left = codes[scenario.adjacency.left]
    right = codes[scenario.adjacency.right]
    count = (scenario.adjacency.left is not None) + (
        scenario.adjacency.right is not None
    )
    return left, right, 0.5 * count


def _obstacle_channels(state: SimState, scenario: Scenario) -> np.ndarray:
    """Nearest obstacles as (rel s, rel d, rel speed, heading diff) slots."""
    rows = []
    ego = state.ego
    for obs in scenario.obstacles:
        x, y, heading, v = obs.state_at(state.step)
        try:
            s_obs = project_to_path(state.path, x, y)
        except OutOfPathError:
            continue
        px, py, ptheta, _, _ = state.path.interpolate(s_obs)
        d_obs = -(x - px) * math.sin(ptheta) + (y - py) * math.cos(ptheta)
        dist = math.hypot(x - ego.x, y - ego.y)
        rows.append(
            (
                dist,
                (s_obs - state.ego_frenet.s) / DISTANCE_SCALE,
                (d_obs - state.ego_frenet.d) / DISTANCE_SCALE,
                (v - ego.velocity) / VELOCITY_SCALE,
                wrap_angle(heading - ego.heading),
            )
        )
    rows.sort(key=lambda r: r[0])
    channels = np.zeros(4 * N_OBSTACLE_SLOTS)
    for slot, row in enumerate(rows[:N_OBSTACLE_SLOTS]):
        channels[4 * slot : 4 * slot + 4] = row[1:]
    return channels


def boundary_cost_grid(bundle: TrajectoryBundle) -> np.ndarray:
    """Collision-probability cost of the outermost lateral samples.

    For each terminal-time group: the cost of the minimum-lateral-target
    sample followed by the maximum-lateral-target sample (ties broken by
    the lower terminal velocity).  Flattened in terminal-time order.
    """
    costs = bundle.cost_terms["collision_prob"]
    groups = np.unique(bundle.terminal_times)
    grid = np.zeros(2 * len(groups))
    for g, t_end in enumerate(groups):
        idx = np.nonzero(bundle.terminal_times == t_end)[0]
        offs = bundle.terminal_offsets[idx]
        vels = bundle.terminal_velocities[idx]
        lo = idx[np.lexsort((vels, offs))[0]]
        hi = idx[np.lexsort((vels, -offs))[0]]
        grid[2 * g] = costs[lo] / COST_SCALE
        grid[2 * g + 1] = costs[hi] / COST_SCALE
    return grid


def build_observation(
    state: SimState,
    scenario: Scenario,
    prev_acceleration: float = None,
    dt: float = 0.1,
) -> np.ndarray:
    """Fixed-layout 57-channel observation, normalized then clipped.

    Channels 0-6: ego motion; 7-11: goal progress; 12-38: adjacency and up
    to six nearest obstacles; 39-42: bundle feasibility and selected-sample
    risks; 43-46: bundle cost statistics; 47-56: boundary cost grid.  When
    no bundle exists yet (episode start) the last three blocks are zero.
    """
    obs = np.zeros(OBSERVATION_DIM)
    ego = state.ego
    frenet = state.ego_frenet

    _, _, path_heading, _, _ = state.path.interpolate(frenet.s)
    jerk = 0.0
    if prev_acceleration is not None:
        jerk = (ego.acceleration - prev_acceleration) / dt
    obs[0] = ego.velocity / VELOCITY_SCALE
    obs[1] = ego.acceleration
    obs[2] = jerk
    obs[3] = math.atan(scenario.vehicle.wheelbase * ego.curvature)
    obs[4] = wrap_angle(ego.heading - float(path_heading))
    obs[5] = ego.velocity * ego.curvature
    obs[6] = frenet.d / DISTANCE_SCALE

    goal = scenario.goal
    obs[7] = max(0.0, goal.s_min - frenet.s) / DISTANCE_SCALE
    obs[8] = (goal.t_max - state.step) / max(1, goal.t_max)
    obs[9] = 1.0 if state.status.goal_reached else 0.0
    obs[10] = 1.0 if state.status is TerminationStatus.TIMEOUT else 0.0
    obs[11] = goal.target_velocity / VELOCITY_SCALE

    obs[12:15] = _adjacency_channels(scenario)
    obs[15:39] = _obstacle_channels(state, scenario)

    bundle = state.last_bundle
    if bundle is not None and bundle.cost_total is not None:
        obs[39] = bundle.feasible_count / bundle.n_samples
        selected = state.selected_index
        if selected is not None:
            obs[40] = 1.0
            obs[41] = float(bundle.ego_risk[selected])
            obs[42] = float(bundle.obstacle_risk[selected])
            obs[43] = float(bundle.cost_total[selected]) / COST_SCALE
            obs[46] = float(bundle.cost_terms["collision_prob"][selected]) / COST_SCALE
        feasible = bundle.feasible_indices()
        if feasible.size:
            totals = bundle.cost_total[feasible]
            obs[44] = float(np.mean(totals)) / COST_SCALE
            obs[45] = float(np.var(totals)) / COST_SCALE**2
        obs[47:57] = boundary_cost_grid(bundle)

    return np.clip(np.nan_to_num(obs, nan=0.0, posinf=OBS_CLIP, neginf=-OBS_CLIP),
                   -OBS_CLIP, OBS_CLIP)


def compute_reward(
    prev: SimState,
    next_state: SimState,
    weights_used: CostWeights,
    status,
    cfg: RewardConfig,
    scenario: Scenario,
) -> float:
    """Sparse termination payout plus dense shaping for one transition.

    ``weights_used`` are the planner weights in effect this step; the
    regulation term penalizes their total deviation from the defaults.
    """
    ego_risk = obstacle_risk = 0.0
    bundle = next_state.last_bundle
    if bundle is not None and next_state.selected_index is not None:
        ego_risk = float(bundle.ego_risk[next_state.selected_index])
        obstacle_risk = float(bundle.obstacle_risk[next_state.selected_index])
    regulation = float(np.abs(weights_used.current - weights_used.defaults).sum())
    dense = (
        -cfg.dist_ref * abs(next_state.ego_frenet.d)
        - cfg.velocity_diff
        * abs(next_state.ego.velocity - scenario.goal.target_velocity)
        + cfg.s_progress * (next_state.ego_frenet.s - prev.ego_frenet.s)
        - cfg.action_regulation * regulation
        - cfg.ego_risk * ego_risk
        - cfg.obstacle_risk * obstacle_risk
    )
    return cfg.sparse(status) + dense


class PlannerEnv:
    """Steppable weight-tuning environment over one or more scenarios.

    Episodes draw scenarios round-robin (or uniformly with
    ``sample_mode="random"``) from the given list.  Actions are 5 reals in
    [-1, 1] scaled to the per-term action bounds before the weight update.
    """

    def __init__(
        self,
        scenarios,
        reward_config: RewardConfig = None,
        settings: PlannerSettings = None,
        weights: CostWeights = None,
        weight_reset: str = "per_episode",
        sample_mode: str = "round_robin",
        first_scenario: int = 0,
    ):
        if isinstance(scenarios, Scenario):
            scenarios = [scenarios]
        if not scenarios:
            raise ValueError("need at least one scenario")
        if weight_reset not in WEIGHT_RESET_MODES:
            raise ValueError(f"weight_reset must be one of {WEIGHT_RESET_MODES}")
        if sample_mode not in ("round_robin", "random"):
            raise ValueError("sample_mode must be 'round_robin' or 'random'")
        self.scenarios = list(scenarios)
        self.reward_config = reward_config or RewardConfig()
        self.settings = settings or PlannerSettings()
        self._base_weights = weights or CostWeights.from_config()
        self.weight_reset = weight_reset
        self.sample_mode = sample_mode
        self._rng = np.random.default_rng(0)
        self._episode_counter = first_scenario
        self.scenario: Scenario = None
        self.state: SimState = None
        self.episode_trace: list = []

    @property
    def action_dim(self) -> int:
        return len(TERM_ORDER)

    @property
    def observation_dim(self) -> int:
        return OBSERVATION_DIM

    def reset(self, seed: int = None, scenario_index: int = None) -> np.ndarray:
        """Start a new episode with default weights; returns the first
        observation (planner blocks zero until the first step plans)."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        if scenario_index is None:
            if self.sample_mode == "random":
                scenario_index = int(self._rng.integers(len(self.scenarios)))
            else:
                scenario_index = self._episode_counter % len(self.scenarios)
        self._episode_counter += 1
        self.scenario = self.scenarios[scenario_index]
        self.state = init_sim(
            self.scenario, self.settings, self._base_weights.reset()
        )
        self.episode_trace = []
        return build_observation(
            self.state, self.scenario, None, self.settings.dt
        )

    def step(self, action) -> StepResult:
        """Apply a weight action, plan, advance, observe, reward."""
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        if self.state.status.terminal:
            raise RuntimeError("episode terminated; call reset()")
        action = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        if action.shape != (self.action_dim,):
            raise ValueError(f"action must have shape ({self.action_dim},)")

        weights = apply_weight_action(
            self.state.weights, action * self.state.weights.action_high
        )
        self.state.weights = weights
        prev = self.state
        prev_acc = prev.ego.acceleration

        bundle, selected = plan_step(prev, self.scenario, self.settings)
        nxt = advance(prev, selected) if selected is not None else prev
        status = check_termination(nxt, self.scenario)
        nxt.status = status

        reward = compute_reward(
            prev, nxt, weights, status, self.reward_config, self.scenario
        )
        if self.weight_reset == "per_step":
            nxt.weights = weights.reset()
        observation = build_observation(
            nxt, self.scenario, prev_acc, self.settings.dt
        )
        self.state = nxt

        terminal = status.terminal
        info = {
            "step": nxt.step,
            "status": status.value,
            "weights": weights.as_dict(),
            "weight_clamps": weights.weight_clamps,
            "action_clamps": weights.action_clamps,
            "feasible_count": bundle.feasible_count,
            "selected_cost": (
                float(bundle.cost_total[selected.index]) if selected else math.nan
            ),
            "plan_timings": dict(bundle.timings),
        }
        self.episode_trace.append(
            {
                "step": nxt.step,
                "x": nxt.ego.x,
                "y": nxt.ego.y,
                "heading": nxt.ego.heading,
                "velocity": nxt.ego.velocity,
                "s": nxt.ego_frenet.s,
                "d": nxt.ego_frenet.d,
                "reward": reward,
                "status": status.value,
                **{f"w_{name}": weights[name] for name in TERM_ORDER},
            }
        )
        return StepResult(
            observation=observation,
            reward=reward,
            terminated=terminal,
            termination_status=status if terminal else None,
            info=info,
        )
