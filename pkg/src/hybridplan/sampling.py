"""Polynomial trajectory sampling in the Frenet frame.

One planning cycle solves a quintic lateral polynomial d(t) and a quartic
longitudinal polynomial s(t) for every combination in a sampling matrix
(terminal time x terminal velocity x lateral offset), evaluates all of them
on a fixed 0.1 s grid over a 3 s horizon, converts to Cartesian states and
runs kinematic feasibility checks against a single-track vehicle model.

Everything is computed on (n_samples, n_steps) arrays; the per-sample
:class:`TrajectorySample` objects are lazy views into those arrays, so the
hot loop never materializes hundreds of Python objects.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import FrenetState, ReferencePath, frenet_to_cartesian_batch

VELOCITY_EPS = 1e-9


@dataclass(frozen=True)
class VehicleParams:
    """Single-track vehicle geometry and actuation limits.

    ``max_curvature`` is derived from the steering limit via the bicycle
    relation kappa = tan(delta_max) / wheelbase; passing it explicitly is
    allowed but it must agree with that relation.
    """

    wheelbase: float = 2.9
    length: float = 4.8
    width: float = 1.8
    max_steering: float = 0.526
    max_abs_acceleration: float = 8.0
    max_velocity: float = 36.0
    max_curvature_rate: float = 0.4
    max_curvature: float = None  # type: ignore[assignment]

    def __post_init__(self):
        derived = math.tan(self.max_steering) / self.wheelbase
        if self.max_curvature is None:
            object.__setattr__(self, "max_curvature", derived)
        elif abs(self.max_curvature - derived) > 1e-9:
            raise ValueError(
                f"max_curvature {self.max_curvature} inconsistent with "
                f"tan(max_steering)/wheelbase = {derived}"
            )
        if min(self.wheelbase, self.length, self.width) <= 0.0:
            raise ValueError("vehicle dimensions must be positive")
        if self.max_velocity <= 0.0 or self.max_abs_acceleration <= 0.0:
            raise ValueError("vehicle limits must be positive")


@dataclass(frozen=True)
class SamplingMatrix:
    """The terminal-condition grid expanded by :func:`generate_bundle`.

    Values are sorted ascending; the bundle enumerates combinations in
    C order (time-major, then velocity, then lateral offset).
    """

    terminal_times: tuple
    terminal_velocities: tuple
    lateral_offsets: tuple

    def __post_init__(self):
        times = tuple(sorted(float(t) for t in self.terminal_times))
        vels = tuple(sorted(float(v) for v in self.terminal_velocities))
        offs = tuple(sorted(float(d) for d in self.lateral_offsets))
        if not times or not vels or not offs:
            raise ValueError("sampling matrix must not be empty")
        if times[0] <= 0.0:
            raise ValueError(f"terminal times must be positive, got {times[0]}")
        if vels[0] < 0.0:
            raise ValueError(f"terminal velocities must be >= 0, got {vels[0]}")
        if not all(map(math.isfinite, times + vels + offs)):
            raise ValueError("sampling matrix values must be finite")
        object.__setattr__(self, "terminal_times", times)
        object.__setattr__(self, "terminal_velocities", vels)
        object.__setattr__(self, "lateral_offsets", offs)

    @property
    def size(self) -> int:
        return (
            len(self.terminal_times)
            * len(self.terminal_velocities)
            * len(self.lateral_offsets)
        )


def default_sampling_matrix(
    ego_velocity: float,
    target_velocity: float,
    vehicle: VehicleParams,
    terminal_times=(1.0, 1.5, 2.0, 2.5, 3.0),
    n_velocities: int = 8,
    velocity_span: float = 4.0,
    lateral_limit: float = 3.5,
    n_lateral: int = 20,
) -> SamplingMatrix:
    """Build the per-cycle sampling grid around the current ego speed.

    Velocities span ``[max(0, v - span), min(v_max, max(v, v_target) + span)]``
    inclusive, lateral offsets cover ``[-lateral_limit, lateral_limit]``.
    """
    v_lo = max(0.0, ego_velocity - velocity_span)
    v_hi = min(vehicle.max_velocity, max(ego_velocity, target_velocity) + velocity_span)
    if v_hi <= v_lo:
        v_hi = v_lo + 1e-6
    return SamplingMatrix(
        terminal_times=tuple(terminal_times),
        terminal_velocities=tuple(np.linspace(v_lo, v_hi, n_velocities)),
        lateral_offsets=tuple(np.linspace(-lateral_limit, lateral_limit, n_lateral)),
    )


def solve_lateral_quintic(d0, d_dot0, d_ddot0, d_target, duration):
    """Quintic d(t) with d(T) = d_target and zero terminal velocity/accel.

    Returns coefficients (c0..c5), lowest order first.  Closed form from the
    inverse of the 3x3 boundary system, so residuals are at machine level.
    """
    T = float(duration)
    if T <= 0.0:
        raise ValueError(f"duration must be positive, got {T}")
    c0, c1, c2 = float(d0), float(d_dot0), 0.5 * float(d_ddot0)
    delta = float(d_target) - (c0 + c1 * T + c2 * T * T)
    delta_v = -(c1 + 2.0 * c2 * T)
    delta_a = -2.0 * c2
    c3 = (10.0 * delta - 4.0 * delta_v * T + 0.5 * delta_a * T * T) / T**3
    c4 = (-15.0 * delta + 7.0 * delta_v * T - delta_a * T * T) / T**4
    c5 = (6.0 * delta - 3.0 * delta_v * T + 0.5 * delta_a * T * T) / T**5
    return np.array([c0, c1, c2, c3, c4, c5])


def solve_longitudinal_quartic(s0, s_dot0, s_ddot0, v_target, duration):
    """Quartic s(t) with terminal velocity v_target and zero terminal accel.

    Returns coefficients (c0..c4), lowest order first.
    """
    T = float(duration)
    if T <= 0.0:
        raise ValueError(f"duration must be positive, got {T}")
    if v_target < 0.0:
        raise ValueError(f"target velocity must be >= 0, got {v_target}")
    c0, c1, c2 = float(s0), float(s_dot0), 0.5 * float(s_ddot0)
    delta_v = float(v_target) - (c1 + 2.0 * c2 * T)
    delta_a = -2.0 * c2
    c3 = delta_v / T**2 - delta_a / (3.0 * T)
    c4 = -delta_v / (2.0 * T**3) + delta_a / (4.0 * T**2)
    return np.array([c0, c1, c2, c3, c4])


@dataclass
class TrajectoryStates:
    """Per-step state arrays; 2-D (n_samples, n_steps) on a bundle, 1-D on a
    sample view."""

    t: np.ndarray
    s: np.ndarray
    s_dot: np.ndarray
    s_ddot: np.ndarray
    d: np.ndarray
    d_dot: np.ndarray
    d_ddot: np.ndarray
    d_prime: np.ndarray
    d_pprime: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    curvature: np.ndarray

    def row(self, i: int) -> "TrajectoryStates":
        return TrajectoryStates(
            t=self.t,
            **{
                name: getattr(self, name)[i]
                for name in (
                    "s",
                    "s_dot",
                    "s_ddot",
                    "d",
                    "d_dot",
                    "d_ddot",
                    "d_prime",
                    "d_pprime",
                    "x",
                    "y",
                    "heading",
                    "velocity",
                    "acceleration",
                    "curvature",
                )
            },
        )


@dataclass
class TrajectoryBundle:
    """All candidate trajectories of one planning cycle, as batch arrays."""

    dt: float
    horizon: float
    matrix_shape: tuple
    terminal_times: np.ndarray
    terminal_velocities: np.ndarray
    terminal_offsets: np.ndarray
    lateral_coeffs: np.ndarray
    longitudinal_coeffs: np.ndarray
    states: TrajectoryStates
    feasible: np.ndarray
    reasons: dict
    cost_terms: dict | None = None
    cost_total: np.ndarray | None = None
    cost_unweighted: np.ndarray | None = None
    ego_risk: np.ndarray | None = None
    obstacle_risk: np.ndarray | None = None
    sorted_indices: np.ndarray | None = None
    timings: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.terminal_times)

    @property
    def n_steps(self) -> int:
        return len(self.states.t)

    @property
    def feasible_count(self) -> int:
        return int(np.count_nonzero(self.feasible))

    def feasible_indices(self) -> np.ndarray:
        return np.nonzero(self.feasible)[0]

    def sample(self, index: int) -> "TrajectorySample":
        if not 0 <= index < self.n_samples:
            raise IndexError(f"sample index {index} out of range")
        return TrajectorySample(self, index)

    @property
    def samples(self) -> list:
        return [TrajectorySample(self, i) for i in range(self.n_samples)]


@dataclass(frozen=True)
class TrajectorySample:
    """Read-only view of one trajectory inside a bundle."""

    bundle: TrajectoryBundle
    index: int

    @property
    def duration(self) -> float:
        return float(self.bundle.terminal_times[self.index])

    @property
    def terminal_velocity(self) -> float:
        return float(self.bundle.terminal_velocities[self.index])

    @property
    def lateral_offset(self) -> float:
        return float(self.bundle.terminal_offsets[self.index])

    @property
    def lateral_coeffs(self) -> np.ndarray:
        return self.bundle.lateral_coeffs[self.index]

    @property
    def longitudinal_coeffs(self) -> np.ndarray:
        return self.bundle.longitudinal_coeffs[self.index]

    @property
    def states(self) -> TrajectoryStates:
        return self.bundle.states.row(self.index)

    @property
    def feasible(self) -> bool:
        return bool(self.bundle.feasible[self.index])

    @property
    def infeasibility_reasons(self) -> list:
        return [
            name for name, mask in self.bundle.reasons.items() if mask[self.index]
        ]

    @property
    def cost_breakdown(self):
        if self.bundle.cost_terms is None:
            return None
        from .costs import breakdown_for

        return breakdown_for(self.bundle, self.index)

    @property
    def total_cost(self) -> float | None:
        if self.bundle.cost_total is None:
            return None
        return float(self.bundle.cost_total[self.index])

    @property
    def ego_risk(self) -> float | None:
        if self.bundle.ego_risk is None:
            return None
        return float(self.bundle.ego_risk[self.index])

    @property
    def obstacle_risk(self) -> float | None:
        if self.bundle.obstacle_risk is None:
            return None
        return float(self.bundle.obstacle_risk[self.index])


def _poly_eval(coeffs: np.ndarray, tau: np.ndarray):
    """Value and first two derivatives of per-row polynomials at tau.

    coeffs has shape (n, k), lowest order first; tau has shape (n, m).
    Simultaneous Horner: each accumulator folds in the one below before the
    value picks up the next coefficient.
    """
    k = coeffs.shape[1]
    value = np.zeros_like(tau)
    vel = np.zeros_like(tau)
    acc = np.zeros_like(tau)
    for p in range(k - 1, -1, -1):
        acc = acc * tau + vel
        vel = vel * tau + value
        value = value * tau + coeffs[:, p : p + 1]
    return value, vel, 2.0 * acc


def generate_bundle(
    ego: FrenetState,
    matrix: SamplingMatrix,
    path: ReferencePath,
    vehicle: VehicleParams,
    dt: float = 0.1,
    horizon: float = 3.0,
) -> TrajectoryBundle:
    """Expand the sampling matrix into evaluated candidate trajectories.

    Every candidate is solved in closed form, evaluated on the shared time
    grid (trajectories shorter than the horizon are extended by holding the
    terminal velocity and lateral offset), converted to Cartesian states and
    screened for transform singularities.  Kinematic limit checks live in
    :func:`apply_kinematic_checks` / :func:`check_kinematics`.
    """
    if max(matrix.terminal_times) > horizon + 1e-9:
        raise ValueError(
            f"terminal time {max(matrix.terminal_times)} exceeds horizon {horizon}"
        )
    n_steps = int(round(horizon / dt)) + 1
    t_grid = np.arange(n_steps) * dt

    times = np.asarray(matrix.terminal_times)
    vels = np.asarray(matrix.terminal_velocities)
    offs = np.asarray(matrix.lateral_offsets)
    n_t, n_v, n_d = len(times), len(vels), len(offs)
    T = np.repeat(times, n_v * n_d)
    v_term = np.tile(np.repeat(vels, n_d), n_t)
    d_term = np.tile(offs, n_t * n_v)
    n = len(T)

    # Closed-form boundary solves, vectorized over the whole matrix.
    lat = np.zeros((n, 6))
    lat[:, 0] = ego.d
    lat[:, 1] = ego.d_dot
    lat[:, 2] = 0.5 * ego.d_ddot
    delta = d_term - (lat[:, 0] + lat[:, 1] * T + lat[:, 2] * T * T)
    delta_v = -(lat[:, 1] + 2.0 * lat[:, 2] * T)
    delta_a = -2.0 * lat[:, 2]
    lat[:, 3] = (10.0 * delta - 4.0 * delta_v * T + 0.5 * delta_a * T * T) / T**3
    lat[:, 4] = (-15.0 * delta + 7.0 * delta_v * T - delta_a * T * T) / T**4
    lat[:, 5] = (6.0 * delta - 3.0 * delta_v * T + 0.5 * delta_a * T * T) / T**5

    lon = np.zeros((n, 5))
    lon[:, 0] = ego.s
    lon[:, 1] = ego.s_dot
    lon[:, 2] = 0.5 * ego.s_ddot
    dv = v_term - (lon[:, 1] + 2.0 * lon[:, 2] * T)
    da = -2.0 * lon[:, 2]
    lon[:, 3] = dv / T**2 - da / (3.0 * T)
    lon[:, 4] = -dv / (2.0 * T**3) + da / (4.0 * T**2)

    # Clamping t at the terminal time implements the hold extension: the
    # boundary conditions pin d', d'', s'' to zero there, and s keeps
    # growing linearly at the terminal velocity.
    tau = np.minimum(t_grid[None, :], T[:, None])
    d, d_dot, d_ddot = _poly_eval(lat, tau)
    s, s_dot, s_ddot = _poly_eval(lon, tau)
    s = s + v_term[:, None] * (t_grid[None, :] - tau)

    moving = np.abs(s_dot) > VELOCITY_EPS
    safe_s_dot = np.where(moving, s_dot, 1.0)
    d_prime = np.where(moving, d_dot / safe_s_dot, 0.0)
    d_pprime = np.where(
        moving, (d_ddot - d_prime * s_ddot) / safe_s_dot**2, 0.0
    )

    x, y, heading, velocity, accel, curvature, singular = frenet_to_cartesian_batch(
        path, s, s_dot, s_ddot, d, d_prime, d_pprime
    )

    states = TrajectoryStates(
        t=t_grid,
        s=s,
        s_dot=s_dot,
        s_ddot=s_ddot,
        d=d,
        d_dot=d_dot,
        d_ddot=d_ddot,
        d_prime=d_prime,
        d_pprime=d_pprime,
        x=x,
        y=y,
        heading=heading,
        velocity=velocity,
        acceleration=accel,
        curvature=curvature,
    )

    reasons = {
        "transform_singularity": singular.any(axis=1),
        "beyond_path": (s > path.length + 1e-9).any(axis=1),
    }
    feasible = ~(reasons["transform_singularity"] | reasons["beyond_path"])

    return TrajectoryBundle(
        dt=dt,
        horizon=horizon,
        matrix_shape=(n_t, n_v, n_d),
        terminal_times=T,
        terminal_velocities=v_term,
        terminal_offsets=d_term,
        lateral_coeffs=lat,
        longitudinal_coeffs=lon,
        states=states,
        feasible=feasible,
        reasons=reasons,
    )


def _limit_masks(states: TrajectoryStates, vehicle: VehicleParams, dt: float):
    """Per-sample violation masks for the single-track limit checks."""
    two_d = states.velocity.ndim == 2
    axis = 1 if two_d else 0

    centripetal = states.velocity**2 * states.curvature
    total_accel = np.hypot(states.acceleration, centripetal)
    heading_rate = np.diff(states.heading, axis=axis)
    heading_rate = (-((-heading_rate + math.pi) % (2 * math.pi) - math.pi)) / dt
    if two_d:
        yaw_expected = (
            0.5
            * (
                states.velocity[:, 1:] * states.curvature[:, 1:]
                + states.velocity[:, :-1] * states.curvature[:, :-1]
            )
        )
    else:
        yaw_expected = 0.5 * (
            states.velocity[1:] * states.curvature[1:]
            + states.velocity[:-1] * states.curvature[:-1]
        )
    yaw_err = np.abs(heading_rate - yaw_expected)
    curv_rate = np.abs(np.diff(states.curvature, axis=axis)) / dt

    return {
        "negative_velocity": (states.s_dot < -VELOCITY_EPS).any(axis=axis),
        "velocity": (states.velocity > vehicle.max_velocity + 1e-9).any(axis=axis),
        "curvature": (
            np.abs(states.curvature) > vehicle.max_curvature + 1e-9
        ).any(axis=axis),
        "acceleration": (
            total_accel > vehicle.max_abs_acceleration + 1e-9
        ).any(axis=axis),
        "curvature_rate": (
            curv_rate > vehicle.max_curvature_rate + 1e-9
        ).any(axis=axis),
        "yaw_consistency": (
            yaw_err > 0.1 + 0.05 * np.abs(yaw_expected)
        ).any(axis=axis),
    }


def apply_kinematic_checks(bundle: TrajectoryBundle, vehicle: VehicleParams) -> None:
    """Run the limit checks over the whole bundle and fold the results into
    its feasibility mask."""
    masks = _limit_masks(bundle.states, vehicle, bundle.dt)
    for name, mask in masks.items():
        bundle.reasons[name] = mask
        bundle.feasible &= ~mask


def check_kinematics(sample: TrajectorySample, vehicle: VehicleParams):
    """Classify one trajectory against the vehicle limits.

    Returns ``(feasible, reasons)`` where reasons lists the violated checks;
    transform-stage flags recorded on the bundle are included.
    """
    masks = _limit_masks(sample.states, vehicle, sample.bundle.dt)
    reasons = [name for name, bad in masks.items() if bad]
    for name in ("transform_singularity", "beyond_path"):
        mask = sample.bundle.reasons.get(name)
        if mask is not None and mask[sample.index]:
            reasons.append(name)
    return (not reasons), reasons
