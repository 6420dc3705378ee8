"""Command-line entry point: plan, train, bench, timing.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  The environment
variables HYBRIDPLAN_OUT and HYBRIDPLAN_WORKERS override the --out and
--workers settings when set.
"""

import argparse
import csv
import os
import sys
from pathlib import Path

import torch

from . import __version__
from .benchmark import (
    SCENARIO_FIELDS,
    TIMING_FIELDS,
    TRACE_FIELDS,
    corpus_files,
    run_benchmark,
    run_scenario_default,
    run_scenario_hybrid,
    run_timing,
    weights_for,
    write_aggregate_json,
    write_csv,
)
from .config import load_config
from .costs import TERM_ORDER
from .env import OBSERVATION_DIM
from .policy import GaussianPolicy
from .ppo import (
    load_checkpoint,
    make_env_factory,
    make_eval_fn,
    save_checkpoint,
    train,
)
from .scenario import load_scenario, split_corpus


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(sub):
    sub.add_argument("--config", help="TOML config file (defaults built in)")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument(
        "--out",
        default=".",
        help="output directory (HYBRIDPLAN_OUT overrides when set)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="hybridplan",
        description="Sampling-based trajectory planner with learned cost tuning.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="run one scenario episode")
    _add_common(plan)
    plan.add_argument("--scenario", required=True, help="scenario JSON file")
    plan.add_argument("--mode", choices=("default", "hybrid"), default="default")
    plan.add_argument("--policy", help="policy checkpoint (hybrid mode)")
    plan.set_defaults(handler=cmd_plan)

    train_p = sub.add_parser("train", help="train the weight-tuning agent")
    _add_common(train_p)
    train_p.add_argument("--corpus", required=True, help="scenario corpus directory")
    train_p.set_defaults(handler=cmd_train)

    bench = sub.add_parser("bench", help="benchmark planners over a corpus")
    _add_common(bench)
    bench.add_argument("--corpus", required=True)
    bench.add_argument("--mode", choices=("default", "hybrid", "both"),
                       default="default")
    bench.add_argument("--policy", help="policy checkpoint (hybrid/both)")
    bench.add_argument(
        "--sweep",
        help="comma list of collision-probability weights (default mode)",
    )
    bench.add_argument(
        "--workers",
        type=int,
        help="worker processes (HYBRIDPLAN_WORKERS overrides when set)",
    )
    bench.set_defaults(handler=cmd_bench)

    timing = sub.add_parser("timing", help="per-iteration phase timing")
    _add_common(timing)
    timing.add_argument("--corpus", required=True)
    timing.add_argument("--policy", help="policy checkpoint (random policy if absent)")
    timing.set_defaults(handler=cmd_timing)
    return parser


def _out_dir(args) -> Path:
    out = Path(os.environ.get("HYBRIDPLAN_OUT") or args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_plan(args) -> int:
    config = load_config(args.config)
    scenario = load_scenario(args.scenario)
    settings = config.planner_settings()
    if args.mode == "hybrid":
        if not args.policy:
            raise UsageError("hybrid mode requires --policy")
        policy, _ = load_checkpoint(args.policy)
        row, _, trace_rows = run_scenario_hybrid(
            scenario,
            policy,
            config.reward_config(),
            settings,
            config["env"]["weight_reset"],
        )
    else:
        row, _, trace_rows = run_scenario_default(
            scenario, settings, weights_for(config)
        )
    out = _out_dir(args)
    trace_path = out / f"trace_{scenario.scenario_id}_{args.mode}.csv"
    write_csv(trace_path, trace_rows, TRACE_FIELDS)
    print(
        f"scenario {scenario.scenario_id}: {row['status']} "
        f"after {row['steps']} steps ({trace_path})"
    )
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    files = corpus_files(args.corpus)
    scenarios = [load_scenario(path) for path in files]
    scenarios.sort(key=lambda sc: sc.scenario_id)
    train_set, val_set, test_set = split_corpus(
        scenarios,
        args.seed,
        train_frac=config["train"]["split_train"],
        val_frac=config["train"]["split_val"],
    )
    print(
        f"corpus {len(scenarios)}: train {len(train_set)} / "
        f"val {len(val_set)} / test {len(test_set)}"
    )
    settings = config.planner_settings()
    reward = config.reward_config()
    weight_reset = config["env"]["weight_reset"]
    result = train(
        make_env_factory(
            train_set,
            reward_config=reward,
            settings=settings,
            weight_reset=weight_reset,
            sample_mode=config["env"]["sample_mode"],
        ),
        hyperparams=config.hyperparams(),
        policy_spec=config.policy_spec(),
        eval_fn=make_eval_fn(
            val_set, reward_config=reward, settings=settings,
            weight_reset=weight_reset,
        ),
        seed=args.seed,
        eval_every=config["train"]["eval_every"],
        progress=lambda row: print(
            f"update {row['update']}: return {row.get('mean_return', float('nan')):.2f} "
            f"eval {row.get('eval_return', float('nan')):.2f}"
        ),
    )
    out = _out_dir(args)
    extra = {
        "config_hash": config.hash,
        "seed": args.seed,
        "test_scenarios": [sc.scenario_id for sc in test_set],
    }
    save_checkpoint(out / "policy_best.pt", result.policy, config.hyperparams(), extra)
    final = GaussianPolicy(
        result.policy.obs_dim, result.policy.action_dim, result.policy.spec
    )
    final.load_state_dict(result.final_state_dict)
    save_checkpoint(out / "policy_final.pt", final, config.hyperparams(), extra)

    log_path = out / "training_log.csv"
    fieldnames = list(dict.fromkeys(key for row in result.log for key in row))
    with open(log_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames, restval="")
        writer.writeheader()
        writer.writerows(result.log)
    print(f"best eval return {result.best_score:.2f} ({out / 'policy_best.pt'})")
    return 0


def cmd_bench(args) -> int:
    config = load_config(args.config)
    files = corpus_files(args.corpus)
    if args.mode in ("hybrid", "both") and not args.policy:
        raise UsageError(f"mode {args.mode} requires --policy")
    sweep = None
    if args.sweep:
        try:
            sweep = [float(v) for v in args.sweep.split(",") if v.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --sweep value: {exc}") from exc
    workers_env = os.environ.get("HYBRIDPLAN_WORKERS")
    if workers_env is not None:
        workers = int(workers_env)
    elif args.workers is not None:
        workers = args.workers
    else:
        workers = config["bench"]["workers"]
    records, aggregates = run_benchmark(
        files,
        config,
        mode=args.mode,
        sweep=sweep,
        policy_path=args.policy,
        workers=workers,
    )
    out = _out_dir(args)
    write_csv(out / "bench_scenarios.csv", records, SCENARIO_FIELDS)
    write_aggregate_json(out / "bench_aggregates.json", aggregates, config.hash)
    for agg in aggregates:
        tag = f" w={agg['collision_weight']}" if agg["collision_weight"] != "" else ""
        print(
            f"{agg['mode']}{tag}: success {agg['success_rate']:.2f} "
            f"collisions {agg['collision_count']} over {agg['n_scenarios']}"
        )
    return 0


def cmd_timing(args) -> int:
    config = load_config(args.config)
    files = corpus_files(args.corpus)
    scenarios = [load_scenario(path) for path in files]
    scenarios.sort(key=lambda sc: sc.scenario_id)
    if args.policy:
        policy, _ = load_checkpoint(args.policy)
    else:
        torch.manual_seed(args.seed)
        policy = GaussianPolicy(OBSERVATION_DIM, len(TERM_ORDER), config.policy_spec())
    rows = run_timing(
        scenarios,
        policy,
        config.reward_config(),
        config.planner_settings(),
        config["env"]["weight_reset"],
    )
    out = _out_dir(args)
    write_csv(out / "timing.csv", rows, TIMING_FIELDS)
    for row in rows:
        print(
            f"{row['phase']}: median {1e3 * row['median_s']:.2f} ms "
            f"mean {1e3 * row['mean_s']:.2f} ms (n={row['n']})"
        )
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
