"""Corpus benchmarking, trace export and timing instrumentation.

Runs the default planner (optionally sweeping the collision-probability
weight) and/or a trained hybrid policy over a scenario corpus, producing
one CSV row per scenario plus aggregate JSON (success/collision rates,
risk statistics, pooled driving measurements).  Scenario episodes are
independent, so they can run in a spawn-based worker pool; results are
merged in deterministic (group, scenario-id) order regardless of worker
scheduling.  Timing instrumentation separates policy inference, trajectory
bundle calculation, and the overall per-iteration step.
"""

import csv
import json
import math
import multiprocessing
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from .config import Config
from .costs import TERM_ORDER, CostWeights
from .env import PlannerEnv, RewardConfig
from .geometry import build_reference_path, cartesian_to_frenet
from .ppo import load_checkpoint
from .scenario import Scenario, load_scenario
from .simulation import PlannerSettings, run_default_episode

SCENARIO_FIELDS = [
    "scenario_id",
    "mode",
    "collision_weight",
    "status",
    "steps",
    "collision",
    "goal",
    "max_ego_risk",
    "mean_ego_risk",
    "max_obstacle_risk",
    "mean_obstacle_risk",
]

TRACE_FIELDS = [
    "step",
    "x",
    "y",
    "heading",
    "velocity",
    "s",
    "d",
    "total_cost",
    "unweighted_cost",
    "ego_risk",
    "obstacle_risk",
    "feasible_count",
    "reward",
    "status",
] + [f"w_{name}" for name in TERM_ORDER]

TIMING_FIELDS = ["phase", "n", "min_s", "median_s", "mean_s", "max_s"]

REPORT_VERSION = 1


def corpus_files(corpus_dir) -> list:
    """All scenario files under a directory, in stable name order."""
    files = sorted(Path(corpus_dir).rglob("*.json"), key=lambda p: p.name)
    if not files:
        raise FileNotFoundError(f"no scenario files under {corpus_dir}")
    return files


def weights_for(config: Config, collision_weight: float = None) -> CostWeights:
    """Cost weights from config, optionally overriding collision_prob."""
    costs = dict(config["costs"])
    bound = costs.pop("bound_factor")
    action = costs.pop("action_factor")
    if collision_weight is not None:
        costs["collision_prob"] = float(collision_weight)
    return CostWeights.from_config(costs, bound_factor=bound, action_factor=action)


def _nan_mean(values) -> float:
    clean = [v for v in values if math.isfinite(v)]
    return float(np.mean(clean)) if clean else math.nan


def _nan_max(values) -> float:
    clean = [v for v in values if math.isfinite(v)]
    return float(np.max(clean)) if clean else math.nan


def _episode_row(status, steps, ego_risks, obstacle_risks) -> dict:
    return {
        "status": status.value,
        "steps": steps,
        "collision": int(status.value == "collision"),
        "goal": int(status.goal_reached),
        "max_ego_risk": _nan_max(ego_risks),
        "mean_ego_risk": _nan_mean(ego_risks),
        "max_obstacle_risk": _nan_max(obstacle_risks),
        "mean_obstacle_risk": _nan_mean(obstacle_risks),
    }


def _initial_trace_row(scenario: Scenario, weights: CostWeights) -> dict:
    path = build_reference_path(scenario.reference_path)
    frenet = cartesian_to_frenet(scenario.ego_init, path)
    ego = scenario.ego_init
    row = {
        "step": 0,
        "x": ego.x,
        "y": ego.y,
        "heading": ego.heading,
        "velocity": ego.velocity,
        "s": frenet.s,
        "d": frenet.d,
        "total_cost": math.nan,
        "unweighted_cost": math.nan,
        "ego_risk": math.nan,
        "obstacle_risk": math.nan,
        "feasible_count": "",
        "reward": math.nan,
        "status": "running",
    }
    row.update({f"w_{name}": weights[name] for name in TERM_ORDER})
    return row


def run_scenario_default(
    scenario: Scenario, settings: PlannerSettings, weights: CostWeights
):
    """Default-planner episode; returns (row, pooled arrays, trace rows)."""
    result = run_default_episode(scenario, settings, weights)
    ego_risks = [r.ego_risk for r in result.trace]
    obstacle_risks = [r.obstacle_risk for r in result.trace]
    row = _episode_row(result.status, result.steps, ego_risks, obstacle_risks)
    arrays = {
        "abs_d": [abs(r.d) for r in result.trace],
        "velocity": [r.velocity for r in result.trace],
        "unweighted_cost": [
            r.unweighted_cost for r in result.trace if math.isfinite(r.unweighted_cost)
        ],
    }
    trace_rows = [_initial_trace_row(scenario, weights)]
    for r in result.trace:
        trace_rows.append(
            {
                "step": r.step,
                "x": r.x,
                "y": r.y,
                "heading": r.heading,
                "velocity": r.velocity,
                "s": r.s,
                "d": r.d,
                "total_cost": r.total_cost,
                "unweighted_cost": r.unweighted_cost,
                "ego_risk": r.ego_risk,
                "obstacle_risk": r.obstacle_risk,
                "feasible_count": r.feasible_count,
                "reward": math.nan,
                "status": "running",
                **{f"w_{name}": weights[name] for name in TERM_ORDER},
            }
        )
    trace_rows[-1]["status"] = result.status.value
    return row, arrays, trace_rows


def run_scenario_hybrid(
    scenario: Scenario,
    policy,
    reward_config: RewardConfig,
    settings: PlannerSettings,
    weight_reset: str = "per_episode",
):
    """Deterministic-policy episode; returns (row, arrays, trace rows)."""
    env = PlannerEnv(
        scenario,
        reward_config=reward_config,
        settings=settings,
        weight_reset=weight_reset,
    )
    obs = env.reset()
    lstm = policy.initial_state(1) if policy.recurrent else None
    starts = torch.ones(1, dtype=torch.float64)
    trace_rows = [_initial_trace_row(scenario, env.state.weights)]
    abs_d, velocity, costs = [], [], []
    ego_risks, obstacle_risks = [], []
    result = None
    while result is None or not result.terminated:
        obs_t = torch.as_tensor(obs, dtype=torch.float64).unsqueeze(0)
        action, _, _, _, lstm = policy.act(obs_t, lstm, starts, deterministic=True)
        starts = torch.zeros(1, dtype=torch.float64)
        result = env.step(action[0].numpy())
        obs = result.observation

        state = env.state
        bundle = state.last_bundle
        sel = state.selected_index
        if sel is None:
            continue  # planning failure: no new state, no trace row
        abs_d.append(abs(state.ego_frenet.d))
        velocity.append(state.ego.velocity)
        costs.append(float(bundle.cost_unweighted[sel]))
        ego_risks.append(float(bundle.ego_risk[sel]))
        obstacle_risks.append(float(bundle.obstacle_risk[sel]))
        trace_rows.append(
            {
                "step": state.step,
                "x": state.ego.x,
                "y": state.ego.y,
                "heading": state.ego.heading,
                "velocity": state.ego.velocity,
                "s": state.ego_frenet.s,
                "d": state.ego_frenet.d,
                "total_cost": float(bundle.cost_total[sel]),
                "unweighted_cost": float(bundle.cost_unweighted[sel]),
                "ego_risk": float(bundle.ego_risk[sel]),
                "obstacle_risk": float(bundle.obstacle_risk[sel]),
                "feasible_count": result.info["feasible_count"],
                "reward": result.reward,
                "status": result.info["status"],
                **{f"w_{name}": result.info["weights"][name] for name in TERM_ORDER},
            }
        )
    status = result.termination_status
    trace_rows[-1]["status"] = status.value
    row = _episode_row(status, env.state.step, ego_risks, obstacle_risks)
    arrays = {"abs_d": abs_d, "velocity": velocity, "unweighted_cost": costs}
    return row, arrays, trace_rows


def _bench_task(args):
    scenario_path, mode, weight, policy_path, config_data = args
    config = Config(config_data)
    scenario = load_scenario(scenario_path)
    settings = config.planner_settings()
    if mode == "default":
        row, arrays, _ = run_scenario_default(
            scenario, settings, weights_for(config, weight)
        )
    else:
        policy, _ = load_checkpoint(policy_path)
        row, arrays, _ = run_scenario_hybrid(
            scenario,
            policy,
            config.reward_config(),
            settings,
            config["env"]["weight_reset"],
        )
    full_row = {
        "scenario_id": scenario.scenario_id,
        "mode": mode,
        "collision_weight": "" if weight is None else weight,
        **row,
    }
    return full_row, arrays


def _stats4(values) -> dict:
    clean = [v for v in values if math.isfinite(v)]
    if not clean:
        return {"max": math.nan, "mean": math.nan, "median": math.nan, "std": math.nan}
    arr = np.asarray(clean)
    return {
        "max": float(arr.max()),
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "std": float(arr.std()),
    }


def run_benchmark(
    scenario_paths,
    config: Config,
    mode: str = "default",
    sweep=None,
    policy_path=None,
    workers: int = 1,
):
    """Benchmark a corpus; returns (per-scenario rows, aggregate rows).

    ``mode`` is "default", "hybrid", or "both"; ``sweep`` (default mode
    only) lists collision-probability weight values, each forming its own
    group.  Aggregate risk statistics are means/maxima of the per-scenario
    rows, so they are exactly recomputable from the CSV; driving
    measurements pool the per-step traces.
    """
    paths = sorted((Path(p) for p in scenario_paths), key=lambda p: p.name)
    groups = []
    if mode in ("default", "both"):
        for weight in sweep if sweep else [None]:
            groups.append(("default", weight))
    if mode in ("hybrid", "both"):
        if policy_path is None:
            raise ValueError("hybrid mode requires a policy checkpoint")
        groups.append(("hybrid", None))

    tasks = [
        (str(path), grp_mode, weight, policy_path, config.data)
        for grp_mode, weight in groups
        for path in paths
    ]
    if workers <= 1:
        results = [_bench_task(task) for task in tasks]
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            results = list(pool.map(_bench_task, tasks))

    records = [row for row, _ in results]
    aggregates = []
    per_group = len(paths)
    for g, (grp_mode, weight) in enumerate(groups):
        rows = records[g * per_group : (g + 1) * per_group]
        arrays = [arr for _, arr in results[g * per_group : (g + 1) * per_group]]
        counts = {}
        for row in rows:
            counts[row["status"]] = counts.get(row["status"], 0) + 1
        pooled = {
            key: [v for arr in arrays for v in arr[key]]
            for key in ("abs_d", "velocity", "unweighted_cost")
        }
        aggregates.append(
            {
                "mode": grp_mode,
                "collision_weight": "" if weight is None else weight,
                "n_scenarios": len(rows),
                "success_rate": sum(r["goal"] for r in rows) / len(rows),
                "collision_count": sum(r["collision"] for r in rows),
                "status_counts": counts,
                "ego_risk_mean": _nan_mean([r["mean_ego_risk"] for r in rows]),
                "ego_risk_max": _nan_max([r["max_ego_risk"] for r in rows]),
                "obstacle_risk_mean": _nan_mean(
                    [r["mean_obstacle_risk"] for r in rows]
                ),
                "obstacle_risk_max": _nan_max([r["max_obstacle_risk"] for r in rows]),
                "driving": {key: _stats4(vals) for key, vals in pooled.items()},
            }
        )
    return records, aggregates


def run_timing(
    scenarios,
    policy,
    reward_config: RewardConfig,
    settings: PlannerSettings,
    weight_reset: str = "per_episode",
    min_episodes: int = 10,
):
    """Wall-clock phase timing over at least ``min_episodes`` episodes.

    Phases: policy inference, trajectory bundle calculation (the planner's
    sample/evaluate/select pipeline), and the overall model step.
    """
    runs = []
    i = 0
    while len(runs) < max(min_episodes, len(scenarios)):
        runs.append(scenarios[i % len(scenarios)])
        i += 1
    inference, bundle_calc, overall = [], [], []
    for scenario in runs:
        env = PlannerEnv(
            scenario,
            reward_config=reward_config,
            settings=settings,
            weight_reset=weight_reset,
        )
        obs = env.reset()
        lstm = policy.initial_state(1) if policy.recurrent else None
        starts = torch.ones(1, dtype=torch.float64)
        done = False
        while not done:
            t0 = time.perf_counter()
            obs_t = torch.as_tensor(obs, dtype=torch.float64).unsqueeze(0)
            action, _, _, _, lstm = policy.act(obs_t, lstm, starts, deterministic=True)
            t1 = time.perf_counter()
            result = env.step(action[0].numpy())
            t2 = time.perf_counter()
            starts = torch.zeros(1, dtype=torch.float64)
            inference.append(t1 - t0)
            bundle_calc.append(sum(result.info["plan_timings"].values()))
            overall.append(t2 - t0)
            obs = result.observation
            done = result.terminated
    rows = []
    for phase, values in (
        ("policy_inference", inference),
        ("bundle_calculation", bundle_calc),
        ("overall_step", overall),
    ):
        rows.append(
            {
                "phase": phase,
                "n": len(values),
                "min_s": min(values),
                "median_s": statistics.median(values),
                "mean_s": statistics.fmean(values),
                "max_s": max(values),
            }
        )
    return rows


def write_csv(path, rows, fieldnames) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_aggregate_json(path, aggregates, config_hash: str) -> None:
    payload = {
        "format_version": REPORT_VERSION,
        "config_hash": config_hash,
        "aggregates": aggregates,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=1, sort_keys=True)
        handle.write("\n")
