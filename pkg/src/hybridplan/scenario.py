"""Scenario files and the parametric scenario generators.

A scenario bundles a reference path, lane boundaries, scripted obstacle
motion, the ego start state, a goal region with a time window and the
vehicle parameters.  Files are JSON (``format_version`` 1, SI units,
radians); obstacle motion is either an explicit per-step waypoint table on
the 0.1 s grid or an analytic constant-velocity state.

Generators build the bundled corpus: a T-junction left turn against
oncoming traffic (speed, timing, hesitation and platoon-gap variants),
straight-road and lane-follow scenarios, and a weaving-obstacle fixture
used by the benchmark tests.
"""

import json
import math
from dataclasses import dataclass

import jsonschema
import numpy as np

from .geometry import CartesianState
from .risk import RigidTrack, SegmentSet
from .sampling import VehicleParams

FORMAT_VERSION = 1
DT = 0.1

LANE_VALUES = ("same", "opposite", None)


class ScenarioFormatError(ValueError):
    """Raised for malformed scenario files."""


@dataclass(frozen=True)
class Adjacency:
    """Presence and direction of the lanes next to the ego lane."""

    left: str = None
    right: str = None

    def __post_init__(self):
        for side, value in (("left", self.left), ("right", self.right)):
            if value not in LANE_VALUES:
                raise ScenarioFormatError(
                    f"adjacency.{side} must be one of {LANE_VALUES}, got {value!r}"
                )


@dataclass(frozen=True)
class GoalSpec:
    """Longitudinal goal region with an arrival time window (in steps)."""

    s_min: float
    s_max: float
    t_min: int
    t_max: int
    target_velocity: float

    def __post_init__(self):
        if self.s_max <= self.s_min:
            raise ScenarioFormatError(
                f"goal s-range empty: [{self.s_min}, {self.s_max}]"
            )
        if self.t_min > self.t_max:
            raise ScenarioFormatError(
                f"goal time window inverted: [{self.t_min}, {self.t_max}]"
            )
        if self.target_velocity < 0.0:
            raise ScenarioFormatError("target velocity must be >= 0")


@dataclass(frozen=True)
class ObstacleSpec:
    """One scripted obstacle: footprint plus motion description.

    ``motion_type`` is "constant_velocity" (analytic straight-line motion
    from ``init``) or "waypoints" (per-step [x, y, heading, v] rows on the
    simulation grid, extrapolated at constant velocity beyond the last
    row).
    """

    length: float
    width: float
    motion_type: str
    init: tuple = None
    waypoints: np.ndarray = None

    def __post_init__(self):
        if self.motion_type == "constant_velocity":
            if self.init is None or len(self.init) != 4:
                raise ScenarioFormatError(
                    "constant_velocity motion needs init (x, y, heading, velocity)"
                )
        elif self.motion_type == "waypoints":
            wp = np.asarray(self.waypoints, dtype=float)
            if wp.ndim != 2 or wp.shape[1] != 4 or len(wp) < 1:
                raise ScenarioFormatError(
                    "waypoint motion needs rows of [x, y, heading, velocity]"
                )
            object.__setattr__(self, "waypoints", wp)
        else:
            raise ScenarioFormatError(
                f"unknown motion type {self.motion_type!r}"
            )

    def state_at(self, step: int):
        """Ground-truth (x, y, heading, velocity) at a simulation step."""
        if self.motion_type == "constant_velocity":
            x, y, heading, v = self.init
            t = step * DT
            return (
                x + v * math.cos(heading) * t,
                y + v * math.sin(heading) * t,
                heading,
                v,
            )
        wp = self.waypoints
        if step < len(wp):
            x, y, heading, v = wp[step]
            return float(x), float(y), float(heading), float(v)
        x, y, heading, v = wp[-1]
        t = (step - (len(wp) - 1)) * DT
        return (
            float(x + v * math.cos(heading) * t),
            float(y + v * math.sin(heading) * t),
            float(heading),
            float(v),
        )

    def track(self, start_step: int, n_steps: int) -> RigidTrack:
        """Ground-truth poses for [start_step, start_step + n_steps)."""
        poses = np.empty((n_steps, 3))
        for k in range(n_steps):
            x, y, heading, _ = self.state_at(start_step + k)
            poses[k] = (x, y, heading)
        return RigidTrack(poses=poses, length=self.length, width=self.width)


@dataclass(frozen=True, eq=False)
class Scenario:
    """A complete closed-loop driving task. Compare via :meth:`to_dict`."""

    scenario_id: str
    reference_path: np.ndarray
    left_boundary: np.ndarray
    right_boundary: np.ndarray
    adjacency: Adjacency
    obstacles: tuple
    ego_init: CartesianState
    goal: GoalSpec
    max_steps: int
    vehicle: VehicleParams

    def __post_init__(self):
        path = np.asarray(self.reference_path, dtype=float)
        object.__setattr__(self, "reference_path", path)
        object.__setattr__(
            self, "left_boundary", np.asarray(self.left_boundary, dtype=float)
        )
        object.__setattr__(
            self, "right_boundary", np.asarray(self.right_boundary, dtype=float)
        )
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        seg = np.hypot(*np.diff(path, axis=0).T)
        total = float(seg.sum())
        if self.goal.s_max > total + 1e-9:
            raise ScenarioFormatError(
                f"goal s_max {self.goal.s_max:.1f} beyond path length {total:.1f}"
            )
        if self.max_steps < self.goal.t_max:
            raise ScenarioFormatError(
                f"max_steps {self.max_steps} below goal window end {self.goal.t_max}"
            )

    @property
    def path_length(self) -> float:
        seg = np.hypot(*np.diff(self.reference_path, axis=0).T)
        return float(seg.sum())

    def boundary_segments(self) -> SegmentSet:
        return SegmentSet.from_polylines([self.left_boundary, self.right_boundary])

    def to_dict(self) -> dict:
        obstacles = []
        for obs in self.obstacles:
            if obs.motion_type == "constant_velocity":
                motion = {
                    "type": "constant_velocity",
                    "x": obs.init[0],
                    "y": obs.init[1],
                    "heading": obs.init[2],
                    "velocity": obs.init[3],
                }
            else:
                motion = {
                    "type": "waypoints",
                    "states": [[float(v) for v in row] for row in obs.waypoints],
                }
            obstacles.append(
                {
                    "footprint": {"length": obs.length, "width": obs.width},
                    "motion": motion,
                }
            )
        return {
            "format_version": FORMAT_VERSION,
            "id": self.scenario_id,
            "reference_path": [[float(x), float(y)] for x, y in self.reference_path],
            "left_boundary": [[float(x), float(y)] for x, y in self.left_boundary],
            "right_boundary": [[float(x), float(y)] for x, y in self.right_boundary],
            "adjacency": {"left": self.adjacency.left, "right": self.adjacency.right},
            "obstacles": obstacles,
            "ego_init": {
                "x": self.ego_init.x,
                "y": self.ego_init.y,
                "heading": self.ego_init.heading,
                "velocity": self.ego_init.velocity,
                "acceleration": self.ego_init.acceleration,
                "curvature": self.ego_init.curvature,
            },
            "goal": {
                "s_range": [self.goal.s_min, self.goal.s_max],
                "time_window": [self.goal.t_min, self.goal.t_max],
                "target_velocity": self.goal.target_velocity,
            },
            "max_steps": self.max_steps,
            "vehicle": {
                "wheelbase": self.vehicle.wheelbase,
                "length": self.vehicle.length,
                "width": self.vehicle.width,
                "max_steering": self.vehicle.max_steering,
                "max_abs_acceleration": self.vehicle.max_abs_acceleration,
                "max_velocity": self.vehicle.max_velocity,
                "max_curvature_rate": self.vehicle.max_curvature_rate,
            },
        }


_POLYLINE = {
    "type": "array",
    "minItems": 2,
    "items": {
        "type": "array",
        "minItems": 2,
        "maxItems": 2,
        "items": {"type": "number"},
    },
}

_SCHEMA = {
    "type": "object",
    "required": [
        "format_version",
        "id",
        "reference_path",
        "left_boundary",
        "right_boundary",
        "adjacency",
        "obstacles",
        "ego_init",
        "goal",
        "max_steps",
        "vehicle",
    ],
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "id": {"type": "string", "minLength": 1},
        "reference_path": _POLYLINE,
        "left_boundary": _POLYLINE,
        "right_boundary": _POLYLINE,
        "adjacency": {
            "type": "object",
            "required": ["left", "right"],
            "properties": {
                "left": {"enum": ["same", "opposite", None]},
                "right": {"enum": ["same", "opposite", None]},
            },
        },
        "obstacles": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["footprint", "motion"],
                "properties": {
                    "footprint": {
                        "type": "object",
                        "required": ["length", "width"],
                        "properties": {
                            "length": {"type": "number", "exclusiveMinimum": 0},
                            "width": {"type": "number", "exclusiveMinimum": 0},
                        },
                    },
                    "motion": {"type": "object", "required": ["type"]},
                },
            },
        },
        "ego_init": {
            "type": "object",
            "required": ["x", "y", "heading", "velocity"],
        },
        "goal": {
            "type": "object",
            "required": ["s_range", "time_window", "target_velocity"],
            "properties": {
                "s_range": {
                    "type": "array",
                    "minItems": 2,
                    "maxItems": 2,
                    "items": {"type": "number"},
                },
                "time_window": {
                    "type": "array",
                    "minItems": 2,
                    "maxItems": 2,
                    "items": {"type": "integer", "minimum": 0},
                },
                "target_velocity": {"type": "number", "minimum": 0},
            },
        },
        "max_steps": {"type": "integer", "minimum": 1},
        "vehicle": {
            "type": "object",
            "required": [
                "wheelbase",
                "length",
                "width",
                "max_steering",
                "max_abs_acceleration",
                "max_velocity",
                "max_curvature_rate",
            ],
        },
    },
}


def scenario_from_dict(data: dict) -> Scenario:
    try:
        jsonschema.validate(data, _SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ScenarioFormatError(f"{exc.json_path}: {exc.message}") from exc

    obstacles = []
    for i, obs in enumerate(data["obstacles"]):
        motion = obs["motion"]
        footprint = obs["footprint"]
        try:
            if motion["type"] == "constant_velocity":
                spec = ObstacleSpec(
                    length=footprint["length"],
                    width=footprint["width"],
                    motion_type="constant_velocity",
                    init=(
                        motion["x"],
                        motion["y"],
                        motion["heading"],
                        motion["velocity"],
                    ),
                )
            else:
                spec = ObstacleSpec(
                    length=footprint["length"],
                    width=footprint["width"],
                    motion_type=motion["type"],
                    waypoints=motion.get("states"),
                )
        except KeyError as exc:
            raise ScenarioFormatError(
                f"obstacles[{i}].motion missing field {exc.args[0]!r}"
            ) from exc
        obstacles.append(spec)

    ego = data["ego_init"]
    goal = data["goal"]
    return Scenario(
        scenario_id=data["id"],
        reference_path=np.asarray(data["reference_path"], dtype=float),
        left_boundary=np.asarray(data["left_boundary"], dtype=float),
        right_boundary=np.asarray(data["right_boundary"], dtype=float),
        adjacency=Adjacency(**data["adjacency"]),
        obstacles=tuple(obstacles),
        ego_init=CartesianState(
            x=ego["x"],
            y=ego["y"],
            heading=ego["heading"],
            velocity=ego["velocity"],
            acceleration=ego.get("acceleration", 0.0),
            curvature=ego.get("curvature", 0.0),
        ),
        goal=GoalSpec(
            s_min=goal["s_range"][0],
            s_max=goal["s_range"][1],
            t_min=goal["time_window"][0],
            t_max=goal["time_window"][1],
            target_velocity=goal["target_velocity"],
        ),
        max_steps=data["max_steps"],
        vehicle=VehicleParams(**data["vehicle"]),
    )


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ScenarioFormatError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(data)


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(scenario.to_dict(), handle, indent=1, sort_keys=True)
        handle.write("\n")


# ---------------------------------------------------------------------------
# Generators


def _integrate_profile(start, heading, pieces, ds=0.02):
    """Integrate a curvature profile into a polyline.

    ``pieces`` is a list of (length, kappa_start, kappa_end) with linear
    curvature ramps (clothoid segments when the ends differ).
    """
    points = [np.asarray(start, dtype=float)]
    theta = float(heading)
    for length, k0, k1 in pieces:
        n = max(1, int(round(length / ds)))
        h = length / n
        for i in range(n):
            k_mid = k0 + (k1 - k0) * (i + 0.5) / n
            theta_mid = theta + 0.5 * k_mid * h
            new = points[-1] + h * np.array([math.cos(theta_mid), math.sin(theta_mid)])
            theta += k_mid * h
            points.append(new)
    return np.array(points), theta


def _thin(polyline: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.hypot(*np.diff(polyline, axis=0).T)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    grid = np.arange(0.0, cum[-1], spacing)
    grid = np.append(grid, cum[-1])
    return np.stack(
        [np.interp(grid, cum, polyline[:, 0]), np.interp(grid, cum, polyline[:, 1])],
        axis=1,
    )


def _offset_polyline(polyline: np.ndarray, offset: float) -> np.ndarray:
    """Shift a polyline along its left normal by ``offset`` (d-convention)."""
    diffs = np.diff(polyline, axis=0)
    headings = np.arctan2(diffs[:, 1], diffs[:, 0])
    theta = np.empty(len(polyline))
    theta[0] = headings[0]
    theta[-1] = headings[-1]
    theta[1:-1] = headings[:-1] + 0.5 * _wrap(headings[1:] - headings[:-1])
    normal = np.stack([-np.sin(theta), np.cos(theta)], axis=1)
    return polyline + offset * normal


def _wrap(angle):
    return -((-np.asarray(angle) + math.pi) % (2 * math.pi) - math.pi)


def _arc_length_at(polyline: np.ndarray, predicate) -> float:
    """Arc length where the predicate on (x, y) first becomes true."""
    seg = np.hypot(*np.diff(polyline, axis=0).T)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    flags = predicate(polyline[:, 0], polyline[:, 1])
    idx = np.nonzero(flags)[0]
    if idx.size == 0:
        raise ValueError("predicate never satisfied along polyline")
    return float(cum[idx[0]])


LANE_HALF = 1.75
TURN_RADIUS = 8.0
CLOTHOID_LEN = 4.0
OBSTACLE_FOOTPRINT = (4.5, 1.8)


def _t_junction_centerline():
    """Ego centerline: north on the stem, clothoid-blended left turn, west
    on the bar.  Returns (polyline, s_conflict, x_conflict)."""
    kappa = 1.0 / TURN_RADIUS
    # Heading change: two clothoids contribute kappa*len/2 each; the arc
    # supplies the rest of the quarter turn.
    arc_angle = 0.5 * math.pi - kappa * CLOTHOID_LEN
    turn_pieces = [
        (CLOTHOID_LEN, 0.0, kappa),
        (arc_angle / kappa, kappa, kappa),
        (CLOTHOID_LEN, kappa, 0.0),
    ]
    # Size the stem so the turn exits exactly on the westbound lane
    # center y = +LANE_HALF.
    turn_only, _ = _integrate_profile((0.0, 0.0), 0.5 * math.pi, turn_pieces)
    rise = float(turn_only[-1, 1])
    stem = (LANE_HALF - (-45.0)) - rise
    pieces = [(stem, 0.0, 0.0), *turn_pieces, (95.0, 0.0, 0.0)]
    line, _ = _integrate_profile((LANE_HALF, -45.0), 0.5 * math.pi, pieces)
    # Conflict: where the turning ego center crosses the eastbound lane
    # center y = -LANE_HALF (x already bending left).
    s_conflict = _arc_length_at(
        line, lambda x, y: (y >= -LANE_HALF) & (x < LANE_HALF)
    )
    seg = np.hypot(*np.diff(line, axis=0).T)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    x_conflict = float(np.interp(s_conflict, cum, line[:, 0]))
    return _thin(line, 0.25), s_conflict, x_conflict


def _hesitation_waypoints(
    x0, y, v0, x_slow_from, x_resume, v_slow, n_steps, decel=2.5, accel=1.5
):
    """Eastbound obstacle that slows near the conflict zone, then recovers."""
    rows = np.empty((n_steps + 1, 4))
    x, v = float(x0), float(v0)
    for k in range(n_steps + 1):
        rows[k] = (x, y, 0.0, v)
        if x_slow_from <= x < x_resume and v > v_slow:
            v_next = max(v_slow, v - decel * DT)
        elif x >= x_resume and v < v0:
            v_next = min(v0, v + accel * DT)
        else:
            v_next = v
        x += 0.5 * (v + v_next) * DT
        v = v_next
    return rows


def _surge_waypoints(x0, y, v0, x_surge_from, v_high, n_steps, accel=3.0):
    """Eastbound obstacle that floors it approaching the junction."""
    rows = np.empty((n_steps + 1, 4))
    x, v = float(x0), float(v0)
    for k in range(n_steps + 1):
        rows[k] = (x, y, 0.0, v)
        v_next = min(v_high, v + accel * DT) if x >= x_surge_from else v
        x += 0.5 * (v + v_next) * DT
        v = v_next
    return rows


LEAD_PROFILES = ("constant", "hesitate", "surge")


def make_t_junction(
    scenario_id: str,
    oncoming_speed: float,
    time_offset: float = 0.0,
    lead_profile: str = "constant",
    follower_gap: float = 16.0,
    ego_speed: float = 8.0,
) -> Scenario:
    """Left turn across two oncoming vehicles.

    ``time_offset`` shifts when the lead vehicle reaches the conflict point
    relative to the ego's nominal arrival (positive: obstacle later),
    computed as if the lead held its initial speed.  ``lead_profile``
    selects the lead's behaviour near the junction: ``constant`` speed,
    ``hesitate`` (brakes then recovers, arriving later than a
    constant-velocity predictor expects) or ``surge`` (accelerates hard,
    arriving earlier than predicted).
    """
    if lead_profile not in LEAD_PROFILES:
        raise ValueError(f"lead_profile must be one of {LEAD_PROFILES}")
    center, s_conflict, x_conflict = _t_junction_centerline()
    max_steps = 160
    ego_s0 = 6.0
    target_v = 8.0

    left_b = _thin(_offset_polyline(center, 3.0 * LANE_HALF), 0.5)
    right_b = _thin(_offset_polyline(center, -LANE_HALF), 0.5)

    # Nominal ego arrival at the conflict point, discounted for the turn.
    t_ego = (s_conflict - ego_s0) / (0.85 * ego_speed)
    t_lead = t_ego + time_offset
    lead_x0 = x_conflict - oncoming_speed * t_lead
    lane_y = -LANE_HALF

    obstacles = []
    if lead_profile == "hesitate":
        obstacles.append(
            ObstacleSpec(
                length=OBSTACLE_FOOTPRINT[0],
                width=OBSTACLE_FOOTPRINT[1],
                motion_type="waypoints",
                waypoints=_hesitation_waypoints(
                    lead_x0,
                    lane_y,
                    oncoming_speed,
                    x_slow_from=x_conflict - 12.0,
                    x_resume=x_conflict + 4.0,
                    v_slow=0.35 * oncoming_speed,
                    n_steps=max_steps + 40,
                ),
            )
        )
    elif lead_profile == "surge":
        obstacles.append(
            ObstacleSpec(
                length=OBSTACLE_FOOTPRINT[0],
                width=OBSTACLE_FOOTPRINT[1],
                motion_type="waypoints",
                waypoints=_surge_waypoints(
                    lead_x0,
                    lane_y,
                    oncoming_speed,
                    x_surge_from=x_conflict - 11.0,
                    v_high=oncoming_speed + 8.0,
                    n_steps=max_steps + 40,
                    accel=4.0,
                ),
            )
        )
    else:
        obstacles.append(
            ObstacleSpec(
                length=OBSTACLE_FOOTPRINT[0],
                width=OBSTACLE_FOOTPRINT[1],
                motion_type="constant_velocity",
                init=(lead_x0, lane_y, 0.0, oncoming_speed),
            )
        )
    if lead_profile == "surge":
        obstacles.append(
            ObstacleSpec(
                length=OBSTACLE_FOOTPRINT[0],
                width=OBSTACLE_FOOTPRINT[1],
                motion_type="waypoints",
                waypoints=_surge_waypoints(
                    lead_x0 - follower_gap,
                    lane_y,
                    oncoming_speed,
                    x_surge_from=x_conflict - 11.0,
                    v_high=oncoming_speed + 8.0,
                    n_steps=max_steps + 40,
                    accel=4.0,
                ),
            )
        )
    else:
        obstacles.append(
            ObstacleSpec(
                length=OBSTACLE_FOOTPRINT[0],
                width=OBSTACLE_FOOTPRINT[1],
                motion_type="constant_velocity",
                init=(lead_x0 - follower_gap, lane_y, 0.0, oncoming_speed),
            )
        )

    goal_lo = s_conflict + 26.0
    nominal = (goal_lo - ego_s0) / target_v
    seg = np.hypot(*np.diff(center, axis=0).T)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    ego_xy = (
        float(np.interp(ego_s0, cum, center[:, 0])),
        float(np.interp(ego_s0, cum, center[:, 1])),
    )
    return Scenario(
        scenario_id=scenario_id,
        reference_path=center,
        left_boundary=left_b,
        right_boundary=right_b,
        adjacency=Adjacency(left="opposite", right=None),
        obstacles=tuple(obstacles),
        ego_init=CartesianState(
            x=ego_xy[0], y=ego_xy[1], heading=0.5 * math.pi, velocity=ego_speed
        ),
        goal=GoalSpec(
            s_min=goal_lo,
            s_max=goal_lo + 10.0,
            t_min=int(round(0.55 * nominal / DT)),
            t_max=min(max_steps - 5, int(round(1.75 * nominal / DT))),
            target_velocity=target_v,
        ),
        max_steps=max_steps,
        vehicle=VehicleParams(),
    )


def make_straight_road(
    scenario_id: str,
    lead_speed: float = None,
    lead_start: float = 40.0,
    ego_speed: float = 10.0,
) -> Scenario:
    """150 m straight with an optional slower lead vehicle to overtake."""
    xs = np.arange(0.0, 150.01, 0.5)
    center = np.stack([xs, np.zeros_like(xs)], axis=1)
    obstacles = ()
    if lead_speed is not None:
        obstacles = (
            ObstacleSpec(
                length=OBSTACLE_FOOTPRINT[0],
                width=OBSTACLE_FOOTPRINT[1],
                motion_type="constant_velocity",
                init=(lead_start, 0.0, 0.0, lead_speed),
            ),
        )
    return Scenario(
        scenario_id=scenario_id,
        reference_path=center,
        left_boundary=_offset_polyline(center, 3.0 * LANE_HALF),
        right_boundary=_offset_polyline(center, -LANE_HALF),
        adjacency=Adjacency(left="same", right=None),
        obstacles=obstacles,
        ego_init=CartesianState(x=5.0, y=0.0, heading=0.0, velocity=ego_speed),
        goal=GoalSpec(
            s_min=85.0, s_max=95.0, t_min=40, t_max=144, target_velocity=10.0
        ),
        max_steps=160,
        vehicle=VehicleParams(),
    )


def make_lane_follow(
    scenario_id: str, lead_speed: float = None, amplitude: float = 2.5
) -> Scenario:
    """Gentle S-curve; tracks lateral control on curved references."""
    xs = np.arange(0.0, 140.01, 0.25)
    ys = amplitude * np.sin(2.0 * math.pi * xs / 60.0)
    center = np.stack([xs, ys], axis=1)
    obstacles = ()
    if lead_speed is not None:
        # Lead vehicle follows the curve downstream of the ego.
        obstacles = (
            ObstacleSpec(
                length=OBSTACLE_FOOTPRINT[0],
                width=OBSTACLE_FOOTPRINT[1],
                motion_type="waypoints",
                waypoints=_curve_follower(center, 35.0, lead_speed, 220),
            ),
        )
    return Scenario(
        scenario_id=scenario_id,
        reference_path=center,
        left_boundary=_offset_polyline(center, 3.0 * LANE_HALF),
        right_boundary=_offset_polyline(center, -LANE_HALF),
        adjacency=Adjacency(left="same", right=None),
        obstacles=obstacles,
        ego_init=CartesianState(x=4.0, y=float(np.interp(4.0, xs, ys)), heading=math.atan2(
            float(np.interp(4.1, xs, ys)) - float(np.interp(3.9, xs, ys)), 0.2
        ), velocity=7.0),
        goal=GoalSpec(
            s_min=75.0, s_max=85.0, t_min=50, t_max=155, target_velocity=7.0
        ),
        max_steps=160,
        vehicle=VehicleParams(),
    )


def _curve_follower(center: np.ndarray, s0: float, speed: float, n_steps: int):
    """Waypoints of a vehicle tracking a polyline at constant speed."""
    seg = np.hypot(*np.diff(center, axis=0).T)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    rows = np.empty((n_steps + 1, 4))
    for k in range(n_steps + 1):
        s = min(s0 + speed * k * DT, cum[-1])
        x = float(np.interp(s, cum, center[:, 0]))
        y = float(np.interp(s, cum, center[:, 1]))
        s_ahead = min(s + 0.5, cum[-1])
        xa = float(np.interp(s_ahead, cum, center[:, 0]))
        ya = float(np.interp(s_ahead, cum, center[:, 1]))
        heading = math.atan2(ya - y, xa - x) if s_ahead > s else rows[k - 1, 2]
        rows[k] = (x, y, heading, speed)
    return rows


def _weave_track(
    start_x: float,
    start_y: float,
    speed: float,
    rate: float,
    freq: float,
    phase: float,
    n_steps: int,
) -> np.ndarray:
    """Oncoming track whose heading oscillates sinusoidally."""
    rows = np.empty((n_steps + 1, 4))
    x, y = float(start_x), float(start_y)
    heading = math.pi
    for k in range(n_steps + 1):
        rows[k] = (x, y, heading, speed)
        yaw_rate = rate * math.sin(2.0 * math.pi * freq * k * DT + phase)
        heading_new = heading + yaw_rate * DT
        mid = 0.5 * (heading + heading_new)
        x += speed * math.cos(mid) * DT
        y += speed * math.sin(mid) * DT
        heading = heading_new
    return rows


def make_weave_fixture(
    scenario_id: str,
    weave_rate: float = 1.0,
    weave_freq: float = 1.2,
    obstacle_speed: float = 5.0,
    start_x: float = 45.0,
    phase: float = 0.0,
    n_obstacles: int = 3,
    spacing: float = 45.0,
    half_width: float = 4.5,
    lane_offset: float = -0.9,
    obstacle_length: float = 6.5,
) -> Scenario:
    """Obstacle-dense fixture: a procession of oncoming weaving vehicles.

    The scripted heading oscillation defeats the constant-velocity,
    constant-heading predictor at close range, so grazing margins chosen by
    a collision-cost-blind planner turn into real collisions.  Obstacles sit
    on one side and are spaced beyond one planning horizon so a clean gap
    always exists; the weave amplitude is small enough that predictions
    never paint the whole road as blocked.  Used by the collision-weight
    sweep tests; not part of the training corpus.
    """
    xs = np.arange(0.0, 150.01, 0.5)
    center = np.stack([xs, np.zeros_like(xs)], axis=1)
    n_steps = 240
    obstacles = []
    for i in range(n_obstacles):
        rows = _weave_track(
            start_x + i * spacing,
            lane_offset,
            obstacle_speed,
            weave_rate,
            weave_freq,
            phase + 2.0 * i,
            n_steps,
        )
        obstacles.append(
            ObstacleSpec(
                length=obstacle_length,
                width=OBSTACLE_FOOTPRINT[1],
                motion_type="waypoints",
                waypoints=rows,
            )
        )
    return Scenario(
        scenario_id=scenario_id,
        reference_path=center,
        left_boundary=_offset_polyline(center, half_width),
        right_boundary=_offset_polyline(center, -half_width),
        adjacency=Adjacency(left="opposite", right=None),
        obstacles=tuple(obstacles),
        ego_init=CartesianState(x=5.0, y=0.0, heading=0.0, velocity=8.0),
        goal=GoalSpec(
            s_min=110.0, s_max=120.0, t_min=40, t_max=230, target_velocity=8.0
        ),
        max_steps=240,
        vehicle=VehicleParams(),
    )


def split_corpus(items, seed: int, train_frac: float = 0.75, val_frac: float = 0.15):
    """Deterministic seeded train/validation/test split of a corpus.

    Sizes are int(train_frac*n) / int(val_frac*n) / remainder; all three
    parts must come out non-empty.
    """
    items = list(items)
    order = np.random.default_rng(seed).permutation(len(items))
    shuffled = [items[i] for i in order]
    n_train = int(train_frac * len(items))
    n_val = int(val_frac * len(items))
    train = shuffled[:n_train]
    val = shuffled[n_train : n_train + n_val]
    test = shuffled[n_train + n_val :]
    if not (train and val and test):
        raise ValueError(
            f"corpus of {len(items)} too small for a {train_frac}/{val_frac} split"
        )
    return train, val, test


def corpus_variants():
    """Parameter table of the bundled T-junction corpus."""
    rows = []
    idx = 0
    for speed in (4.0, 6.0, 8.0, 10.0, 12.0):
        for offset in (-1.0, 0.0, 1.0):
            for profile in ("constant", "hesitate"):
                gap = 14.0 if idx % 2 == 0 else 20.0
                rows.append(
                    {
                        "scenario_id": f"tjunction_{idx:02d}",
                        "oncoming_speed": speed,
                        "time_offset": offset,
                        "lead_profile": profile,
                        "follower_gap": gap,
                    }
                )
                idx += 1
    for speed in (5.0, 6.0, 7.0):
        for offset in (0.5, 1.0, 1.5):
            rows.append(
                {
                    "scenario_id": f"tjunction_{idx:02d}",
                    "oncoming_speed": speed,
                    "time_offset": offset,
                    "lead_profile": "surge",
                    "follower_gap": 18.0,
                }
            )
            idx += 1
    for offset in (-2.0, 2.0):
        rows.append(
            {
                "scenario_id": f"tjunction_{idx:02d}",
                "oncoming_speed": 8.0,
                "time_offset": offset,
                "lead_profile": "hesitate",
                "follower_gap": 16.0,
            }
        )
        idx += 1
    return rows


def generate_corpus(out_dir) -> list:
    """Write the bundled scenario corpus; returns the written paths."""
    import pathlib

    out = pathlib.Path(out_dir)
    tjunction = out / "tjunction"
    extra = out / "extra"
    tjunction.mkdir(parents=True, exist_ok=True)
    extra.mkdir(parents=True, exist_ok=True)

    written = []
    for params in corpus_variants():
        sc = make_t_junction(**params)
        path = tjunction / f"{sc.scenario_id}.json"
        save_scenario(sc, path)
        written.append(path)
    extras = [
        make_straight_road("straight_empty"),
        make_straight_road("straight_lead", lead_speed=6.0),
        make_straight_road("straight_lead_slow", lead_speed=4.0, lead_start=55.0),
        make_lane_follow("scurve_empty"),
        make_lane_follow("scurve_lead", lead_speed=5.5),
    ]
    for sc in extras:
        path = extra / f"{sc.scenario_id}.json"
        save_scenario(sc, path)
        written.append(path)
    return written
