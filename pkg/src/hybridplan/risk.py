"""Obstacle prediction, probabilistic collision exposure and exact checks.

Predictions are a constant-velocity substitute with linearly growing
positional covariance.  Collision probability per pose is the bivariate
normal density at the ego center times the ego footprint area, with the
obstacle footprint folded into the covariance as an isotropic spread.
Trajectory risk is the maximum over steps and obstacles of probability
times harm, where harm is a logistic function of closing speed.

Exact geometric collision checking uses the separating-axis test on
oriented rectangles with a closed-set convention: touching counts as
collision.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_SIGMA0_SQ = 0.04
DEFAULT_GROWTH = 0.1


@dataclass(frozen=True)
class HarmParams:
    """Logistic harm curve parameters and optional party masses."""

    slope: float = 0.25
    offset: float = 5.0
    ego_mass: float = 1500.0
    obstacle_mass: float = 1500.0

    def __post_init__(self):
        if self.slope <= 0.0:
            raise ValueError(f"harm slope must be positive, got {self.slope}")
        if self.ego_mass <= 0.0 or self.obstacle_mass <= 0.0:
            raise ValueError("masses must be positive")


@dataclass(frozen=True)
class RiskPair:
    """Ego-side and third-party-side trajectory risk, both in [0, 1]."""

    ego_risk: float
    obstacle_risk: float


@dataclass(frozen=True)
class PredictionStep:
    """One horizon step of an obstacle prediction."""

    mean: np.ndarray
    covariance: np.ndarray
    footprint: tuple


@dataclass(frozen=True)
class ObstaclePrediction:
    """Predicted obstacle motion over the 31-step horizon.

    ``means`` is (n, 2), ``headings`` and ``velocities`` are (n,),
    ``covariances`` is (n, 2, 2) and must be symmetric PSD throughout.
    """

    means: np.ndarray
    headings: np.ndarray
    velocities: np.ndarray
    covariances: np.ndarray
    footprint: tuple

    def __post_init__(self):
        n = len(self.means)
        if not (len(self.headings) == len(self.velocities) == len(self.covariances) == n):
            raise ValueError("prediction arrays must share one length")
        cov = self.covariances
        if np.abs(cov[:, 0, 1] - cov[:, 1, 0]).max(initial=0.0) > 1e-9:
            raise ValueError("covariances must be symmetric")
        det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] * cov[:, 1, 0]
        if (cov[:, 0, 0] < -1e-12).any() or (det < -1e-9).any():
            raise ValueError("covariances must be positive semi-definite")

    def step(self, k: int) -> PredictionStep:
        return PredictionStep(
            mean=self.means[k],
            covariance=self.covariances[k],
            footprint=self.footprint,
        )


def predict_constant_velocity(
    x: float,
    y: float,
    heading: float,
    velocity: float,
    footprint=(4.5, 1.8),
    horizon: float = 3.0,
    dt: float = 0.1,
    sigma0_sq: float = DEFAULT_SIGMA0_SQ,
    growth: float = DEFAULT_GROWTH,
) -> ObstaclePrediction:
    """Constant-velocity, constant-heading prediction with growing
    positional uncertainty: covariance(t) = (sigma0_sq + growth * t) * I."""
    n = int(round(horizon / dt)) + 1
    t = np.arange(n) * dt
    means = np.stack(
        [x + velocity * math.cos(heading) * t, y + velocity * math.sin(heading) * t],
        axis=1,
    )
    variances = sigma0_sq + growth * t
    covariances = np.zeros((n, 2, 2))
    covariances[:, 0, 0] = variances
    covariances[:, 1, 1] = variances
    return ObstaclePrediction(
        means=means,
        headings=np.full(n, float(heading)),
        velocities=np.full(n, float(velocity)),
        covariances=covariances,
        footprint=(float(footprint[0]), float(footprint[1])),
    )


def _effective_inverse(pred: ObstaclePrediction):
    """Per-step inverse and determinant of Σ_eff = Σ + spread·I.

    The obstacle footprint enters as an isotropic spread
    (length² + width²)/12 on both diagonal entries.  Near-singular steps
    get a 1e-6·I regularization (with a log diagnostic).
    """
    length, width = pred.footprint
    spread = (length * length + width * width) / 12.0
    a = pred.covariances[:, 0, 0] + spread
    b = pred.covariances[:, 0, 1]
    c = pred.covariances[:, 1, 1] + spread
    det = a * c - b * b
    bad = det < 1e-12
    if bad.any():
        log.warning(
            "regularizing %d near-singular prediction covariance step(s)",
            int(np.count_nonzero(bad)),
        )
        a = a + 1e-6
        c = c + 1e-6
        det = a * c - b * b
    return c / det, -b / det, a / det, det


def collision_probability_grid(x, y, pred: ObstaclePrediction, ego_area: float):
    """Vectorized collision probability for ego centers (..., n_steps).

    Density-times-area approximation, clamped to [0, 1].
    """
    inv_a, inv_b, inv_c, det = _effective_inverse(pred)
    dx = x - pred.means[:, 0]
    dy = y - pred.means[:, 1]
    quad = inv_a * dx * dx + 2.0 * inv_b * dx * dy + inv_c * dy * dy
    density = np.exp(-0.5 * quad) / (2.0 * math.pi * np.sqrt(det))
    return np.minimum(1.0, ego_area * density)


def collision_probability(ego_pose, ego_footprint, pred_step: PredictionStep) -> float:
    """Probability that the ego footprint overlaps the predicted obstacle.

    ``ego_pose`` is (x, y, heading); heading does not enter the isotropic
    approximation but is part of the pose contract.
    """
    length, width = pred_step.footprint
    spread = (length * length + width * width) / 12.0
    cov = np.asarray(pred_step.covariance, dtype=float)
    a = cov[0, 0] + spread
    b = cov[0, 1]
    c = cov[1, 1] + spread
    det = a * c - b * b
    if det < 1e-12:
        log.warning("regularizing near-singular prediction covariance")
        a += 1e-6
        c += 1e-6
        det = a * c - b * b
    dx = float(ego_pose[0]) - float(pred_step.mean[0])
    dy = float(ego_pose[1]) - float(pred_step.mean[1])
    quad = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    density = math.exp(-0.5 * quad) / (2.0 * math.pi * math.sqrt(det))
    area = float(ego_footprint[0]) * float(ego_footprint[1])
    return min(1.0, area * density)


def harm(v_ego: float, v_obs: float, params: HarmParams = None):
    """Harm severity pair for a potential collision at these speeds.

    Logistic in the closing-speed magnitude; with unequal masses the
    lighter party's harm is scaled up by the mass ratio (clamped to 1).
    """
    if params is None:
        params = HarmParams()
    if v_ego < 0.0 or v_obs < 0.0:
        raise ValueError("speeds must be >= 0")
    dv = abs(float(v_ego) - float(v_obs))
    base = 1.0 / (1.0 + math.exp(-(params.slope * dv - params.offset)))
    h_ego = min(1.0, base * max(1.0, params.obstacle_mass / params.ego_mass))
    h_obs = min(1.0, base * max(1.0, params.ego_mass / params.obstacle_mass))
    return h_ego, h_obs


def harm_grid(v_ego, v_obs, params: HarmParams):
    """Array version of :func:`harm` (broadcasting inputs)."""
    dv = np.abs(v_ego - v_obs)
    base = 1.0 / (1.0 + np.exp(-(params.slope * dv - params.offset)))
    h_ego = np.minimum(1.0, base * max(1.0, params.obstacle_mass / params.ego_mass))
    h_obs = np.minimum(1.0, base * max(1.0, params.ego_mass / params.obstacle_mass))
    return h_ego, h_obs


def exposure(x, y, velocity, predictions, ego_area: float, params: HarmParams):
    """Shared probability/risk sweep over obstacles.

    Inputs are (n, n_steps) grids; returns the per-step max collision
    probability (n, n_steps) plus ego and third-party risks (n,), the
    latter maximized over steps and obstacles.
    """
    p_max = np.zeros_like(x)
    ego_risk = np.zeros(x.shape[0])
    obstacle_risk = np.zeros(x.shape[0])
    for pred in predictions:
        if len(pred.means) != x.shape[1]:
            raise ValueError(
                f"prediction covers {len(pred.means)} steps, horizon has {x.shape[1]}"
            )
        p = collision_probability_grid(x, y, pred, ego_area)
        np.maximum(p_max, p, out=p_max)
        h_ego, h_obs = harm_grid(velocity, pred.velocities[None, :], params)
        ego_risk = np.maximum(ego_risk, (p * h_ego).max(axis=1))
        obstacle_risk = np.maximum(obstacle_risk, (p * h_obs).max(axis=1))
    return p_max, ego_risk, obstacle_risk


def trajectory_risk(
    sample, predictions, params: HarmParams = None, ego_area: float = None
) -> RiskPair:
    """Maximum-over-horizon risk pair of one trajectory (max aggregation
    across steps and obstacles)."""
    if params is None:
        params = HarmParams()
    if not predictions:
        return RiskPair(0.0, 0.0)
    if ego_area is None:
        from .sampling import VehicleParams

        veh = VehicleParams()
        ego_area = veh.length * veh.width
    states = sample.states
    _, ego, obs = exposure(
        states.x[None, :],
        states.y[None, :],
        states.velocity[None, :],
        predictions,
        ego_area,
        params,
    )
    return RiskPair(float(ego[0]), float(obs[0]))


# ---------------------------------------------------------------------------
# Exact rectangle collision checking (separating axis test)


@dataclass(frozen=True)
class RigidTrack:
    """Ground-truth or predicted obstacle motion as per-step poses.

    ``poses`` is (n_steps, 3): x, y, heading.
    """

    poses: np.ndarray
    length: float
    width: float


@dataclass(frozen=True)
class SegmentSet:
    """Flat collection of 2D segments (boundary polylines)."""

    p0: np.ndarray
    p1: np.ndarray

    @classmethod
    def from_polylines(cls, polylines) -> "SegmentSet":
        starts, ends = [], []
        for line in polylines:
            pts = np.asarray(line, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
                raise ValueError("boundary polyline must have shape (n>=2, 2)")
            seg_len = np.hypot(*(pts[1:] - pts[:-1]).T)
            keep = seg_len > 1e-12
            starts.append(pts[:-1][keep])
            ends.append(pts[1:][keep])
        return cls(p0=np.concatenate(starts), p1=np.concatenate(ends))

    @property
    def n_segments(self) -> int:
        return len(self.p0)


def rectangle_corners(x, y, heading, length, width) -> np.ndarray:
    """Corners of an oriented rectangle centered at (x, y), shape (..., 4, 2)."""
    x = np.asarray(x, dtype=float)
    cos_h = np.cos(heading)
    sin_h = np.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    cx = np.stack([cos_h, sin_h], axis=-1)
    cy = np.stack([-sin_h, cos_h], axis=-1)
    center = np.stack([np.asarray(x, dtype=float), np.asarray(y, dtype=float)], axis=-1)
    return (
        center[..., None, :]
        + local[..., :, 0, None] * cx[..., None, :]
        + local[..., :, 1, None] * cy[..., None, :]
    )


def rectangles_collide(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    """Closed-set SAT for two convex quadrilaterals given as (4, 2) corners."""
    for corners in (corners_a, corners_b):
        edges = np.roll(corners, -1, axis=0) - corners
        axes = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
        for axis in axes:
            pa = corners_a @ axis
            pb = corners_b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def _steps_collide(ego_corners: np.ndarray, obs_corners: np.ndarray) -> np.ndarray:
    """Vectorized SAT over matching (k, 4, 2) corner stacks -> (k,) bool."""
    collide = np.ones(len(ego_corners), dtype=bool)
    for corners in (ego_corners, obs_corners):
        edges = np.roll(corners, -1, axis=1) - corners
        axes = np.stack([-edges[..., 1], edges[..., 0]], axis=-1)  # (k, 4, 2)
        pa = np.einsum("kce,kae->kac", ego_corners, axes)  # (k, 4 axes, 4 corners)
        pb = np.einsum("kce,kae->kac", obs_corners, axes)
        separated = (pa.max(axis=2) < pb.min(axis=2)) | (
            pb.max(axis=2) < pa.min(axis=2)
        )
        collide &= ~separated.any(axis=1)
    return collide


def _segments_collide(ego_corners: np.ndarray, segments: SegmentSet) -> np.ndarray:
    """SAT of one ego rectangle stack (k, 4, 2) against all segments.

    Returns (k,) bool: whether any segment touches the rectangle at that
    step.  Axes per pair: the rectangle's two edge normals plus the segment
    normal (sufficient for convex SAT with a degenerate polygon).
    """
    k = len(ego_corners)
    if segments.n_segments == 0:
        return np.zeros(k, dtype=bool)
    p0, p1 = segments.p0, segments.p1  # (m, 2)

    # Cheap bounding-box prefilter per step x segment.
    rect_min = ego_corners.min(axis=1)  # (k, 2)
    rect_max = ego_corners.max(axis=1)
    seg_min = np.minimum(p0, p1)  # (m, 2)
    seg_max = np.maximum(p0, p1)
    boxed = (
        (rect_min[:, None, 0] <= seg_max[None, :, 0])
        & (rect_max[:, None, 0] >= seg_min[None, :, 0])
        & (rect_min[:, None, 1] <= seg_max[None, :, 1])
        & (rect_max[:, None, 1] >= seg_min[None, :, 1])
    )  # (k, m)
    hit = np.zeros(k, dtype=bool)
    if not boxed.any():
        return hit

    for step in range(k):
        idx = np.nonzero(boxed[step])[0]
        if idx.size == 0:
            continue
        corners = ego_corners[step]  # (4, 2)
        a0, a1 = p0[idx], p1[idx]  # (m', 2)
        seg_pts = np.stack([a0, a1], axis=1)  # (m', 2, 2)

        separated = np.zeros(len(idx), dtype=bool)
        # Rectangle edge normals (two unique directions suffice).
        edges = np.roll(corners, -1, axis=0) - corners
        for axis in (np.array([-edges[0, 1], edges[0, 0]]), np.array([-edges[1, 1], edges[1, 0]])):
            pr = corners @ axis  # (4,)
            ps = seg_pts @ axis  # (m', 2)
            separated |= (pr.max() < ps.min(axis=1)) | (ps.max(axis=1) < pr.min())
        # Segment normals.
        d = a1 - a0  # (m', 2)
        normal = np.stack([-d[:, 1], d[:, 0]], axis=1)  # (m', 2)
        pr = normal @ corners.T  # (m', 4)
        ps = np.einsum("me,mse->ms", normal, seg_pts)  # (m', 2)
        separated |= (pr.max(axis=1) < ps.min(axis=1)) | (ps.max(axis=1) < pr.min(axis=1))
        hit[step] = bool((~separated).any())
    return hit


def collision_check(
    sample,
    obstacles,
    boundaries: SegmentSet = None,
    ego_footprint=(4.8, 1.8),
):
    """First step index where the trajectory collides, or None.

    ``obstacles`` is a list of :class:`RigidTrack` whose poses align with
    the trajectory's step grid; ``boundaries`` holds the lane-edge segments.
    Exact geometry, closed-set convention (touching counts).
    """
    states = sample.states
    k = len(states.t)
    ego_corners = rectangle_corners(
        states.x, states.y, states.heading, ego_footprint[0], ego_footprint[1]
    )
    colliding = np.zeros(k, dtype=bool)
    for track in obstacles:
        if len(track.poses) < k:
            raise ValueError(
                f"obstacle track has {len(track.poses)} steps, trajectory {k}"
            )
        obs_corners = rectangle_corners(
            track.poses[:k, 0],
            track.poses[:k, 1],
            track.poses[:k, 2],
            track.length,
            track.width,
        )
        colliding |= _steps_collide(ego_corners, obs_corners)
    if boundaries is not None:
        colliding |= _segments_collide(ego_corners, boundaries)
    hits = np.nonzero(colliding)[0]
    return int(hits[0]) if hits.size else None
