"""Closed-loop simulation: plan one step, advance the ego, terminate.

Each 0.1 s cycle projects the ego onto the reference path, expands and
screens the sampling matrix, scores it under the current cost weights and
picks the cheapest collision-free candidate against *predicted* obstacle
motion.  Advancing moves the ego one step along that candidate while the
scripted obstacles play their ground-truth motion, so prediction error is
the gap the planner has to live with.  Termination distinguishes the three
goal outcomes (in time, faster, slower) from collision, planning failure
and timeout.
"""

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .costs import CostWeights, evaluate_bundle
from .geometry import (
    CartesianState,
    FrenetState,
    ReferencePath,
    build_reference_path,
    cartesian_to_frenet,
)
from .risk import (
    HarmParams,
    RigidTrack,
    SegmentSet,
    _segments_collide,
    collision_check,
    predict_constant_velocity,
    rectangle_corners,
    rectangles_collide,
)
from .sampling import (
    TrajectoryBundle,
    TrajectorySample,
    apply_kinematic_checks,
    default_sampling_matrix,
    generate_bundle,
)
from .scenario import Scenario


class TerminationStatus(enum.Enum):
    RUNNING = "running"
    GOAL_REACHED_IN_TIME = "goal_reached_in_time"
    GOAL_REACHED_FASTER = "goal_reached_faster"
    GOAL_REACHED_SLOWER = "goal_reached_slower"
    COLLISION = "collision"
    NO_FEASIBLE_TRAJECTORY = "no_feasible_trajectory"
    TIMEOUT = "timeout"

    @property
    def terminal(self) -> bool:
        return self is not TerminationStatus.RUNNING

    @property
    def goal_reached(self) -> bool:
        return self in (
            TerminationStatus.GOAL_REACHED_IN_TIME,
            TerminationStatus.GOAL_REACHED_FASTER,
            TerminationStatus.GOAL_REACHED_SLOWER,
        )


@dataclass(frozen=True)
class PlannerSettings:
    """Knobs of the sampling planner and its prediction substitute."""

    dt: float = 0.1
    horizon: float = 3.0
    terminal_times: tuple = (1.0, 1.5, 2.0, 2.5, 3.0)
    n_velocities: int = 8
    velocity_span: float = 4.0
    lateral_limit: float = 3.5
    n_lateral: int = 20
    prediction_sigma0_sq: float = 0.04
    prediction_growth: float = 0.1
    harm: HarmParams = field(default_factory=HarmParams)


@dataclass
class SimState:
    """Mutable per-episode state; :func:`advance` returns a successor that
    shares the immutable path and boundary geometry."""

    scenario_id: str
    path: ReferencePath
    boundaries: SegmentSet
    step: int
    ego: CartesianState
    ego_frenet: FrenetState
    weights: CostWeights
    status: TerminationStatus = TerminationStatus.RUNNING
    last_bundle: TrajectoryBundle = None
    selected_index: int = None


def init_sim(
    scenario: Scenario,
    settings: PlannerSettings = None,
    weights: CostWeights = None,
) -> SimState:
    path = build_reference_path(scenario.reference_path)
    if weights is None:
        weights = CostWeights.from_config()
    return SimState(
        scenario_id=scenario.scenario_id,
        path=path,
        boundaries=scenario.boundary_segments(),
        step=0,
        ego=scenario.ego_init,
        ego_frenet=cartesian_to_frenet(scenario.ego_init, path),
        weights=weights,
    )


def predicted_tracks(predictions) -> list:
    """Mean predicted poses as rigid tracks, for geometric screening."""
    return [
        RigidTrack(
            poses=np.column_stack([p.means, p.headings]),
            length=p.footprint[0],
            width=p.footprint[1],
        )
        for p in predictions
    ]


def select_trajectory(
    bundle: TrajectoryBundle,
    tracks,
    boundaries: SegmentSet,
    ego_footprint,
) -> TrajectorySample:
    """Cheapest feasible sample that clears obstacles and boundaries."""
    for index in bundle.sorted_indices:
        index = int(index)
        if not bundle.feasible[index]:
            continue
        sample = bundle.sample(index)
        if collision_check(sample, tracks, boundaries, ego_footprint) is None:
            return sample
    return None


def plan_step(state: SimState, scenario: Scenario, settings: PlannerSettings = None):
    """One full planning cycle; returns (bundle, selected sample or None).

    Also records the bundle and selection on ``state`` so termination and
    observation code can see what the planner did.
    """
    if settings is None:
        settings = PlannerSettings()
    vehicle = scenario.vehicle

    t0 = time.perf_counter()
    state.ego_frenet = cartesian_to_frenet(state.ego, state.path)
    matrix = default_sampling_matrix(
        state.ego.velocity,
        scenario.goal.target_velocity,
        vehicle,
        terminal_times=settings.terminal_times,
        n_velocities=settings.n_velocities,
        velocity_span=settings.velocity_span,
        lateral_limit=settings.lateral_limit,
        n_lateral=settings.n_lateral,
    )
    bundle = generate_bundle(
        state.ego_frenet,
        matrix,
        state.path,
        vehicle,
        dt=settings.dt,
        horizon=settings.horizon,
    )
    apply_kinematic_checks(bundle, vehicle)
    t1 = time.perf_counter()

    predictions = [
        predict_constant_velocity(
            *obs.state_at(state.step),
            footprint=(obs.length, obs.width),
            horizon=settings.horizon,
            dt=settings.dt,
            sigma0_sq=settings.prediction_sigma0_sq,
            growth=settings.prediction_growth,
        )
        for obs in scenario.obstacles
    ]
    evaluate_bundle(
        bundle,
        state.weights,
        scenario.goal.target_velocity,
        predictions,
        ego_area=vehicle.length * vehicle.width,
        harm_params=settings.harm,
    )
    t2 = time.perf_counter()

    selected = select_trajectory(
        bundle,
        predicted_tracks(predictions),
        state.boundaries,
        (vehicle.length, vehicle.width),
    )
    t3 = time.perf_counter()

    bundle.timings = {"sample": t1 - t0, "evaluate": t2 - t1, "select": t3 - t2}
    state.last_bundle = bundle
    state.selected_index = None if selected is None else selected.index
    return bundle, selected


def advance(state: SimState, selected: TrajectorySample, offset: int = 1) -> SimState:
    """Successor state: ego takes the sample's state ``offset`` steps in."""
    st = selected.states
    ego = CartesianState(
        x=float(st.x[offset]),
        y=float(st.y[offset]),
        heading=float(st.heading[offset]),
        velocity=max(0.0, float(st.velocity[offset])),
        acceleration=float(st.acceleration[offset]),
        curvature=float(st.curvature[offset]),
    )
    frenet = FrenetState(
        s=float(st.s[offset]),
        s_dot=float(st.s_dot[offset]),
        s_ddot=float(st.s_ddot[offset]),
        d=float(st.d[offset]),
        d_prime=float(st.d_prime[offset]),
        d_pprime=float(st.d_pprime[offset]),
    )
    return SimState(
        scenario_id=state.scenario_id,
        path=state.path,
        boundaries=state.boundaries,
        step=state.step + 1,
        ego=ego,
        ego_frenet=frenet,
        weights=state.weights,
        status=state.status,
        last_bundle=state.last_bundle,
        selected_index=state.selected_index,
    )


def ego_pose_collides(state: SimState, scenario: Scenario) -> bool:
    """Exact ground-truth overlap test for the ego's realized pose."""
    vehicle = scenario.vehicle
    ego_corners = rectangle_corners(
        state.ego.x, state.ego.y, state.ego.heading, vehicle.length, vehicle.width
    )
    for obs in scenario.obstacles:
        x, y, heading, _ = obs.state_at(state.step)
        if rectangles_collide(
            ego_corners, rectangle_corners(x, y, heading, obs.length, obs.width)
        ):
            return True
    if state.boundaries.n_segments:
        return bool(_segments_collide(ego_corners[None], state.boundaries)[0])
    return False


def check_termination(state: SimState, scenario: Scenario) -> TerminationStatus:
    """Status after the current step.  Collision dominates planning
    failure, which dominates goal arrival, which dominates timeout."""
    if ego_pose_collides(state, scenario):
        return TerminationStatus.COLLISION
    if state.last_bundle is not None and state.selected_index is None:
        return TerminationStatus.NO_FEASIBLE_TRAJECTORY
    goal = scenario.goal
    if state.ego_frenet.s >= goal.s_min:
        if state.step < goal.t_min:
            return TerminationStatus.GOAL_REACHED_FASTER
        if state.step <= goal.t_max:
            return TerminationStatus.GOAL_REACHED_IN_TIME
        return TerminationStatus.GOAL_REACHED_SLOWER
    if state.step >= scenario.max_steps:
        return TerminationStatus.TIMEOUT
    return TerminationStatus.RUNNING


@dataclass(frozen=True)
class TraceRow:
    """Per-step record kept by episode runners for reporting."""

    step: int
    x: float
    y: float
    heading: float
    velocity: float
    s: float
    d: float
    total_cost: float
    unweighted_cost: float
    ego_risk: float
    obstacle_risk: float
    feasible_count: int
    plan_seconds: float
    timings: dict


@dataclass(frozen=True)
class EpisodeResult:
    scenario_id: str
    status: TerminationStatus
    steps: int
    trace: tuple

    @property
    def goal_reached(self) -> bool:
        return self.status.goal_reached


def _trace_row(state: SimState, bundle: TrajectoryBundle, selected) -> TraceRow:
    if selected is None:
        cost = unweighted = ego_risk = obstacle_risk = math.nan
    else:
        i = selected.index
        cost = float(bundle.cost_total[i])
        unweighted = float(bundle.cost_unweighted[i])
        ego_risk = float(bundle.ego_risk[i])
        obstacle_risk = float(bundle.obstacle_risk[i])
    return TraceRow(
        step=state.step,
        x=state.ego.x,
        y=state.ego.y,
        heading=state.ego.heading,
        velocity=state.ego.velocity,
        s=state.ego_frenet.s,
        d=state.ego_frenet.d,
        total_cost=cost,
        unweighted_cost=unweighted,
        ego_risk=ego_risk,
        obstacle_risk=obstacle_risk,
        feasible_count=bundle.feasible_count,
        plan_seconds=sum(bundle.timings.values()),
        timings=dict(bundle.timings),
    )


def run_default_episode(
    scenario: Scenario,
    settings: PlannerSettings = None,
    weights: CostWeights = None,
    record_trace: bool = True,
) -> EpisodeResult:
    """Run a full episode under constant default weights (no learning).

    The trace holds one row per executed step (the state each advance
    reached); a final planning failure ends the episode without a row.
    """
    if settings is None:
        settings = PlannerSettings()
    state = init_sim(scenario, settings, weights)
    trace = []
    status = check_termination(state, scenario)
    while not status.terminal:
        bundle, selected = plan_step(state, scenario, settings)
        next_state = advance(state, selected) if selected is not None else state
        status = check_termination(next_state, scenario)
        if record_trace and selected is not None:
            trace.append(_trace_row(next_state, bundle, selected))
        state = next_state
        state.status = status
    return EpisodeResult(
        scenario_id=scenario.scenario_id,
        status=status,
        steps=state.step,
        trace=tuple(trace),
    )
