"""Arc-length reference paths and Cartesian <-> Frenet state transforms.

The reference path is a uniformly resampled polyline with heading and
curvature estimated by central differences.  States are converted between
the Cartesian frame (x, y, heading, v, a, kappa) and the curvilinear frame
(s, s_dot, s_ddot, d, d', d'') with the full curvature and curvature-rate
terms, so the two transforms are algebraic inverses of each other away from
the singularity at 1 - kappa_r * d = 0.

Positive d is to the left of the path in driving direction.
"""

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# Below this value of 1 - kappa_r * d the transform has no usable inverse.
SINGULARITY_MARGIN = 1e-6


class DegeneratePathError(ValueError):
    """Raised when a polyline cannot support a reference path."""


class OutOfPathError(ValueError):
    """Raised when a point projects beyond the ends of the reference path."""


class SingularTransformError(ValueError):
    """Raised when a state lies at or beyond the curvature center."""


def wrap_angle(angle):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    wrapped = -((-np.asarray(angle) + math.pi) % TWO_PI - math.pi)
    return wrapped if isinstance(wrapped, np.ndarray) and wrapped.ndim else float(wrapped)


@dataclass(frozen=True)
class CartesianState:
    """Vehicle pose and motion in the world frame."""

    x: float
    y: float
    heading: float
    velocity: float
    acceleration: float = 0.0
    curvature: float = 0.0

    def __post_init__(self):
        if self.velocity < -1e-12:
            raise ValueError(f"velocity must be non-negative, got {self.velocity}")


@dataclass(frozen=True)
class FrenetState:
    """Vehicle state in the curvilinear frame of a reference path.

    ``d_prime``/``d_pprime`` are derivatives of d with respect to arc length,
    ``d_dot``/``d_ddot`` with respect to time.  The temporal pair is derived
    from the spatial pair when omitted; if both are given they must agree
    through the chain rule (d_dot = d' * s_dot).
    """

    s: float
    s_dot: float
    s_ddot: float
    d: float
    d_prime: float
    d_pprime: float
    d_dot: float = field(default=None)  # type: ignore[assignment]
    d_ddot: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        derived_dot = self.d_prime * self.s_dot
        derived_ddot = self.d_pprime * self.s_dot**2 + self.d_prime * self.s_ddot
        if self.d_dot is None:
            object.__setattr__(self, "d_dot", derived_dot)
        elif self.s_dot > 0.0:
            scale = max(1.0, abs(self.d_dot))
            if abs(self.d_dot - derived_dot) > 1e-9 * scale:
                raise ValueError(
                    f"inconsistent lateral velocity: d_dot={self.d_dot} but "
                    f"d' * s_dot = {derived_dot}"
                )
        if self.d_ddot is None:
            object.__setattr__(self, "d_ddot", derived_ddot)


@dataclass(frozen=True)
class ReferencePath:
    """Uniformly sampled arc-length parameterized path.

    All arrays share one length n >= 3 and are read-only.  ``heading`` is
    unwrapped (continuous), which keeps linear interpolation valid across
    the +-pi seam.
    """

    xs: np.ndarray
    ys: np.ndarray
    s: np.ndarray
    heading: np.ndarray
    curvature: np.ndarray
    curvature_rate: np.ndarray
    spacing: float

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def n_samples(self) -> int:
        return len(self.s)

    def interpolate(self, s):
        """Linearly interpolated (x, y, heading, kappa, kappa') at s.

        Accepts a scalar or array; values outside [0, length] are clamped.
        Heading is returned unwrapped.
        """
        s = np.clip(s, 0.0, self.length)
        x = np.interp(s, self.s, self.xs)
        y = np.interp(s, self.s, self.ys)
        heading = np.interp(s, self.s, self.heading)
        kappa = np.interp(s, self.s, self.curvature)
        kappa_rate = np.interp(s, self.s, self.curvature_rate)
        return x, y, heading, kappa, kappa_rate


def build_reference_path(polyline, spacing: float = 0.5) -> ReferencePath:
    """Resample a waypoint polyline into a :class:`ReferencePath`.

    Parameters
    ----------
    polyline : array-like, shape (n, 2)
        Ordered waypoints.  Consecutive duplicates are rejected.
    spacing : float
        Arc-length distance between resampled points in meters.

    Raises
    ------
    DegeneratePathError
        For fewer than two points, duplicate consecutive points, or a total
        length below ``2 * spacing``.
    """
    pts = np.asarray(polyline, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise DegeneratePathError(
            f"polyline must have shape (n>=2, 2), got {pts.shape}"
        )
    if spacing <= 0.0:
        raise DegeneratePathError(f"spacing must be positive, got {spacing}")
    seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    tiny = np.nonzero(seg < 1e-12)[0]
    if tiny.size:
        raise DegeneratePathError(
            f"duplicate consecutive waypoint at index {int(tiny[0])}"
        )
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    total = float(cum[-1])
    if total < 2.0 * spacing:
        raise DegeneratePathError(
            f"polyline length {total:.3f} m is shorter than two spacings "
            f"({2 * spacing:.3f} m)"
        )

    n = int(math.floor(total / spacing + 1e-9)) + 1
    s_grid = np.arange(n) * spacing
    xs = np.interp(s_grid, cum, pts[:, 0])
    ys = np.interp(s_grid, cum, pts[:, 1])

    heading = np.empty(n)
    heading[1:-1] = np.arctan2(ys[2:] - ys[:-2], xs[2:] - xs[:-2])
    heading[0] = math.atan2(ys[1] - ys[0], xs[1] - xs[0])
    heading[-1] = math.atan2(ys[-1] - ys[-2], xs[-1] - xs[-2])
    heading = np.unwrap(heading)

    curvature = _central_difference(heading, spacing)
    # A short moving average knocks down the sawtooth that central
    # differences pick up from resampling kinked polylines.
    curvature = _smooth3(curvature)
    curvature_rate = _central_difference(curvature, spacing)

    for arr in (xs, ys, s_grid, heading, curvature, curvature_rate):
        arr.flags.writeable = False
    return ReferencePath(
        xs=xs,
        ys=ys,
        s=s_grid,
        heading=heading,
        curvature=curvature,
        curvature_rate=curvature_rate,
        spacing=spacing,
    )


def _central_difference(values: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * h)
    out[0] = (values[1] - values[0]) / h
    out[-1] = (values[-1] - values[-2]) / h
    return out


def _smooth3(values: np.ndarray) -> np.ndarray:
    padded = np.pad(values, 1, mode="edge")
    return np.convolve(padded, np.full(3, 1.0 / 3.0), mode="valid")


def project_to_path(path: ReferencePath, x: float, y: float):
    """Arc-length coordinate of the nearest point on the path.

    Returns ``s`` solving the orthogonality condition
    ``(p - r(s)) . t(s) = 0`` on the interpolated path.  Seeded by the
    nearest grid sample plus a quadratic vertex estimate, then polished by a
    bracketed Illinois iteration so the projection is exact to machine
    precision rather than limited by the grid spacing.

    Raises :class:`OutOfPathError` when the point projects beyond either end.
    """
    dx = path.xs - x
    dy = path.ys - y
    d2 = dx * dx + dy * dy
    i = int(np.argmin(d2))
    h = path.spacing
    n = path.n_samples

    # Quadratic vertex through the three closest squared distances.
    s_seed = path.s[i]
    j = min(max(i, 1), n - 2)
    denom = d2[j - 1] - 2.0 * d2[j] + d2[j + 1]
    if denom > 1e-18:
        offset = 0.5 * h * (d2[j - 1] - d2[j + 1]) / denom
        s_seed = float(np.clip(path.s[j] + offset, path.s[j] - h, path.s[j] + h))

    def residual(s):
        px, py, heading, _, _ = path.interpolate(s)
        return (x - px) * math.cos(heading) + (y - py) * math.sin(heading)

    lo = max(s_seed - h, 0.0)
    hi = min(s_seed + h, path.length)
    g_lo = residual(lo)
    g_hi = residual(hi)
    # Walk the bracket along the path if the root is not yet enclosed; the
    # residual decreases with s near a proper projection.
    for _ in range(n):
        if g_lo >= 0.0 >= g_hi:
            break
        if g_lo < 0.0:
            if lo <= 0.0:
                raise OutOfPathError(
                    f"point ({x:.3f}, {y:.3f}) projects before the path start"
                )
            hi, g_hi = lo, g_lo
            lo = max(lo - h, 0.0)
            g_lo = residual(lo)
        else:
            if hi >= path.length:
                raise OutOfPathError(
                    f"point ({x:.3f}, {y:.3f}) projects past the path end"
                )
            lo, g_lo = hi, g_hi
            hi = min(hi + h, path.length)
            g_hi = residual(hi)
    else:  # pragma: no cover - defensive, bracket walk is bounded
        raise OutOfPathError(f"no projection bracket for ({x:.3f}, {y:.3f})")

    # Illinois method: regula falsi with stagnation damping.
    side = 0
    for _ in range(100):
        if g_lo == g_hi:
            break
        mid = (lo * g_hi - hi * g_lo) / (g_hi - g_lo)
        mid = min(max(mid, lo), hi)
        g_mid = residual(mid)
        if abs(g_mid) < 1e-13 or hi - lo < 1e-13:
            return float(mid)
        if g_mid < 0.0:
            hi, g_hi = mid, g_mid
            if side == -1:
                g_lo *= 0.5
            side = -1
        else:
            lo, g_lo = mid, g_mid
            if side == 1:
                g_hi *= 0.5
            side = 1
    return float(0.5 * (lo + hi))


def cartesian_to_frenet(state: CartesianState, path: ReferencePath) -> FrenetState:
    """Convert a world-frame state into path coordinates.

    Raises
    ------
    OutOfPathError
        If the position projects beyond the path ends.
    SingularTransformError
        If the point sits at or beyond the instantaneous curvature center
        (1 - kappa_r * d <= 0).
    """
    s = project_to_path(path, state.x, state.y)
    rx, ry, r_heading, r_kappa, r_kappa_rate = path.interpolate(s)
    dx = state.x - rx
    dy = state.y - ry
    cross = math.cos(r_heading) * dy - math.sin(r_heading) * dx
    d = math.copysign(math.hypot(dx, dy), cross)

    one_m_kd = 1.0 - r_kappa * d
    if one_m_kd <= SINGULARITY_MARGIN:
        raise SingularTransformError(
            f"state at d={d:.3f} lies at/beyond curvature center "
            f"(1 - kappa*d = {one_m_kd:.2e})"
        )

    delta = wrap_angle(state.heading - r_heading)
    cos_delta = math.cos(delta)
    tan_delta = math.tan(delta)

    d_prime = one_m_kd * tan_delta
    kd_term = r_kappa_rate * d + r_kappa * d_prime
    d_pprime = -kd_term * tan_delta + (one_m_kd / cos_delta**2) * (
        state.curvature * one_m_kd / cos_delta - r_kappa
    )
    s_dot = state.velocity * cos_delta / one_m_kd
    delta_prime = (one_m_kd / cos_delta) * state.curvature - r_kappa
    s_ddot = (
        state.acceleration * cos_delta
        - s_dot**2 * (d_prime * delta_prime - kd_term)
    ) / one_m_kd

    return FrenetState(
        s=s,
        s_dot=s_dot,
        s_ddot=s_ddot,
        d=d,
        d_prime=d_prime,
        d_pprime=d_pprime,
        d_dot=state.velocity * math.sin(delta),
    )


def frenet_to_cartesian(state: FrenetState, path: ReferencePath) -> CartesianState:
    """Convert a path-frame state back into the world frame.

    The spatial derivatives (d', d'') drive the geometry; s must lie within
    the path.  Inverse of :func:`cartesian_to_frenet` up to floating point.
    """
    if not 0.0 <= state.s <= path.length + 1e-9:
        raise OutOfPathError(
            f"s={state.s:.3f} outside path [0, {path.length:.3f}]"
        )
    rx, ry, r_heading, r_kappa, r_kappa_rate = path.interpolate(state.s)
    one_m_kd = 1.0 - r_kappa * state.d
    if one_m_kd <= SINGULARITY_MARGIN:
        raise SingularTransformError(
            f"state at d={state.d:.3f} lies at/beyond curvature center "
            f"(1 - kappa*d = {one_m_kd:.2e})"
        )

    x = rx - math.sin(r_heading) * state.d
    y = ry + math.cos(r_heading) * state.d
    delta = math.atan2(state.d_prime, one_m_kd)
    cos_delta = math.cos(delta)
    tan_delta = state.d_prime / one_m_kd
    heading = wrap_angle(delta + r_heading)

    kd_term = r_kappa_rate * state.d + r_kappa * state.d_prime
    curvature = (
        (state.d_pprime + kd_term * tan_delta) * cos_delta**2 / one_m_kd + r_kappa
    ) * cos_delta / one_m_kd
    velocity = state.s_dot * math.hypot(one_m_kd, state.d_prime)
    delta_prime = (one_m_kd / cos_delta) * curvature - r_kappa
    acceleration = state.s_ddot * one_m_kd / cos_delta + (
        state.s_dot**2 / cos_delta
    ) * (state.d_prime * delta_prime - kd_term)

    return CartesianState(
        x=float(x),
        y=float(y),
        heading=float(heading),
        velocity=float(velocity),
        acceleration=float(acceleration),
        curvature=float(curvature),
    )


def frenet_to_cartesian_batch(path: ReferencePath, s, s_dot, s_ddot, d, d_prime, d_pprime):
    """Vectorized frenet -> cartesian over arbitrary-shaped arrays.

    Never raises on singular geometry; instead returns a boolean ``singular``
    mask and substitutes safe values there so downstream arrays stay finite.

    Returns
    -------
    (x, y, heading, velocity, acceleration, curvature, singular)
    """
    rx, ry, r_heading, r_kappa, r_kappa_rate = path.interpolate(s)
    one_m_kd = 1.0 - r_kappa * d
    singular = one_m_kd <= SINGULARITY_MARGIN
    safe = np.where(singular, 1.0, one_m_kd)

    x = rx - np.sin(r_heading) * d
    y = ry + np.cos(r_heading) * d
    delta = np.arctan2(d_prime, safe)
    cos_delta = np.cos(delta)
    tan_delta = d_prime / safe
    heading = wrap_angle(delta + r_heading)

    kd_term = r_kappa_rate * d + r_kappa * d_prime
    curvature = (
        (d_pprime + kd_term * tan_delta) * cos_delta**2 / safe + r_kappa
    ) * cos_delta / safe
    velocity = s_dot * np.hypot(safe, d_prime)
    delta_prime = (safe / cos_delta) * curvature - r_kappa
    acceleration = s_ddot * safe / cos_delta + (s_dot**2 / cos_delta) * (
        d_prime * delta_prime - kd_term
    )
    return x, y, heading, velocity, acceleration, curvature, singular
