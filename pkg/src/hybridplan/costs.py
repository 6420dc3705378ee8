"""Trajectory cost terms, weighted totals and bounded weight adaptation.

Five cost terms are computed per candidate trajectory: collision
probability, lateral jerk, longitudinal jerk, squared distance to the
reference path and squared velocity offset.  Weights live in a
:class:`CostWeights` object whose values an agent may shift each step by a
bounded delta; weights are always clamped back into their configured range.

The batch entry point :func:`evaluate_bundle` fills a whole
:class:`~hybridplan.sampling.TrajectoryBundle` at once.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import risk as risk_mod
from .sampling import TrajectoryBundle, TrajectorySample

TERM_ORDER = ("collision_prob", "jerk_lat", "jerk_lon", "dist_ref", "velocity_offset")

DEFAULT_WEIGHTS = {
    "collision_prob": 1.0,
    "jerk_lat": 0.2,
    "jerk_lon": 0.2,
    "dist_ref": 1.0,
    "velocity_offset": 1.0,
}


@dataclass(frozen=True)
class CostWeights:
    """Current cost-term weights plus their defaults and clamp bounds.

    Immutable; :func:`apply_weight_action` returns an updated copy.  Arrays
    follow :data:`TERM_ORDER`.
    """

    current: np.ndarray
    defaults: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    action_low: np.ndarray
    action_high: np.ndarray
    weight_clamps: int = 0
    action_clamps: int = 0

    @classmethod
    def from_config(
        cls,
        defaults: dict = None,
        bound_factor: float = 5.0,
        action_factor: float = 0.5,
    ) -> "CostWeights":
        values = dict(DEFAULT_WEIGHTS)
        if defaults:
            unknown = set(defaults) - set(TERM_ORDER)
            if unknown:
                raise ValueError(f"unknown cost terms {sorted(unknown)}")
            values.update(defaults)
        base = np.array([float(values[name]) for name in TERM_ORDER])
        if (base < 0.0).any():
            raise ValueError("default weights must be >= 0")
        return cls(
            current=base.copy(),
            defaults=base.copy(),
            lower=np.zeros_like(base),
            upper=bound_factor * base,
            action_low=-action_factor * base,
            action_high=action_factor * base,
        )

    def reset(self) -> "CostWeights":
        return replace(
            self, current=self.defaults.copy(), weight_clamps=0, action_clamps=0
        )

    def as_dict(self) -> dict:
        return {name: float(self.current[i]) for i, name in enumerate(TERM_ORDER)}

    def __getitem__(self, name: str) -> float:
        return float(self.current[TERM_ORDER.index(name)])


def apply_weight_action(weights: CostWeights, deltas) -> CostWeights:
    """Shift weights by per-term deltas with double clamping.

    Deltas are clamped into the configured action bounds first (defensive;
    policies emit bounded actions by construction), then the summed weights
    are clamped into [lower, upper].  Clamp events are counted on the
    returned object for diagnostics.
    """
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape != weights.current.shape:
        raise ValueError(
            f"expected {weights.current.shape[0]} deltas, got {deltas.shape}"
        )
    bounded = np.clip(deltas, weights.action_low, weights.action_high)
    raw = weights.current + bounded
    clamped = np.clip(raw, weights.lower, weights.upper)
    return replace(
        weights,
        current=clamped,
        weight_clamps=weights.weight_clamps + int(np.count_nonzero(raw != clamped)),
        action_clamps=weights.action_clamps
        + int(np.count_nonzero(bounded != deltas)),
    )


@dataclass(frozen=True)
class CostBreakdown:
    """Unweighted term values with their weighted and unweighted totals."""

    terms: dict
    total_weighted: float
    total_unweighted: float


def _quintic_jerk_integral(coeffs: np.ndarray, T: np.ndarray):
    """∫₀ᵀ (third derivative of a quintic)² dt, closed form.

    The third derivative is alpha + beta t + gamma t² with alpha = 6 c3,
    beta = 24 c4, gamma = 60 c5.
    """
    a = 6.0 * coeffs[..., 3]
    b = 24.0 * coeffs[..., 4]
    g = 60.0 * coeffs[..., 5]
    return (
        a * a * T
        + a * b * T**2
        + (b * b + 2.0 * a * g) * T**3 / 3.0
        + b * g * T**4 / 2.0
        + g * g * T**5 / 5.0
    )


def _quartic_jerk_integral(coeffs: np.ndarray, T: np.ndarray):
    """∫₀ᵀ (third derivative of a quartic)² dt, closed form."""
    a = 6.0 * coeffs[..., 3]
    b = 24.0 * coeffs[..., 4]
    return a * a * T + a * b * T**2 + b * b * T**3 / 3.0


def jerk_cost(sample: TrajectorySample):
    """Analytic squared-jerk integrals (lateral, longitudinal).

    Integration runs over the polynomial segment [0, T]; the held extension
    has zero jerk and contributes nothing.
    """
    T = np.asarray(sample.duration)
    lat = float(_quintic_jerk_integral(sample.lateral_coeffs, T))
    lon = float(_quartic_jerk_integral(sample.longitudinal_coeffs, T))
    return lat, lon


def dist_ref_cost(sample: TrajectorySample) -> float:
    """Mean squared lateral offset over the discretized horizon."""
    d = sample.states.d
    return float(np.mean(d * d))


def velocity_offset_cost(sample: TrajectorySample, v_target: float) -> float:
    """Mean squared velocity offset plus a terminal emphasis term."""
    if v_target < 0.0:
        raise ValueError(f"target velocity must be >= 0, got {v_target}")
    dv = sample.states.velocity - v_target
    return float(np.mean(dv * dv) + dv[-1] ** 2)


def collision_prob_cost(sample: TrajectorySample, predictions, ego_area: float = None) -> float:
    """Summed per-step collision probability, max over obstacles per step.

    ``ego_area`` is the ego footprint area used by the density-times-area
    probability; defaults to the stock vehicle footprint.
    """
    if ego_area is None:
        from .sampling import VehicleParams

        veh = VehicleParams()
        ego_area = veh.length * veh.width
    n_steps = len(sample.states.t)
    for pred in predictions:
        if len(pred.means) != n_steps:
            raise ValueError(
                f"prediction covers {len(pred.means)} steps, trajectory has {n_steps}"
            )
    if not predictions:
        return 0.0
    x = sample.states.x[None, :]
    y = sample.states.y[None, :]
    p_max = np.zeros((1, n_steps))
    for pred in predictions:
        p = risk_mod.collision_probability_grid(x, y, pred, ego_area)
        np.maximum(p_max, p, out=p_max)
    return float(p_max.sum())


def total_cost(breakdown: CostBreakdown, weights: CostWeights) -> float:
    """Weighted sum of the breakdown's terms."""
    return float(
        sum(weights[name] * value for name, value in breakdown.terms.items())
    )


def evaluate_bundle(
    bundle: TrajectoryBundle,
    weights: CostWeights,
    v_target: float,
    predictions,
    ego_area: float,
    harm_params=None,
) -> None:
    """Fill cost and risk arrays for every sample of a bundle in one pass.

    Collision probabilities are computed once per obstacle and reused for
    both the probability cost (sum of per-step maxima) and the risk pair
    (max over steps and obstacles of p·H).  Samples are finally argsorted by
    weighted total cost (stable, so equal costs keep matrix order).
    """
    if harm_params is None:
        harm_params = risk_mod.HarmParams()
    states = bundle.states
    n = states.x.shape[0]

    lat_jerk = _quintic_jerk_integral(bundle.lateral_coeffs, bundle.terminal_times)
    lon_jerk = _quartic_jerk_integral(
        bundle.longitudinal_coeffs, bundle.terminal_times
    )
    dist_ref = np.mean(states.d * states.d, axis=1)
    dv = states.velocity - v_target
    velocity_offset = np.mean(dv * dv, axis=1) + dv[:, -1] ** 2

    p_max, ego_risk, obstacle_risk = risk_mod.exposure(
        states.x, states.y, states.velocity, predictions, ego_area, harm_params
    )

    terms = {
        "collision_prob": p_max.sum(axis=1),
        "jerk_lat": lat_jerk,
        "jerk_lon": lon_jerk,
        "dist_ref": dist_ref,
        "velocity_offset": velocity_offset,
    }
    total = np.zeros(n)
    unweighted = np.zeros(n)
    for name in TERM_ORDER:
        total += weights[name] * terms[name]
        unweighted += terms[name]

    bundle.cost_terms = terms
    bundle.cost_total = total
    bundle.cost_unweighted = unweighted
    bundle.ego_risk = ego_risk
    bundle.obstacle_risk = obstacle_risk
    bundle.sorted_indices = np.argsort(total, kind="stable")


def breakdown_for(bundle: TrajectoryBundle, index: int) -> CostBreakdown:
    """Assemble a :class:`CostBreakdown` for one evaluated sample."""
    if bundle.cost_terms is None:
        raise ValueError("bundle costs not evaluated yet")
    terms = {name: float(arr[index]) for name, arr in bundle.cost_terms.items()}
    return CostBreakdown(
        terms=terms,
        total_weighted=float(bundle.cost_total[index]),
        total_unweighted=float(bundle.cost_unweighted[index]),
    )
