"""Command line entry point: train, eval, baseline and compare."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import ControllerKind
from .dqn import TRAINING_LOG_FIELDS, greedy_policy
from .env import controller_policy, run_episode
from .experiment import (
    EPISODE_FIELDS, LEARNING_METHODS, METRICS, SCENARIOS, ExperimentConfig, RunResult, _env, compare,
    config_from_dict, episode_rows, eval_demand_seeds, load_config, run_job, write_csv,
)
from .microsim import ConfigError
from .neural import load_network, save_network
from .rewards import RewardKind


def _base_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "scenario", None):
        cfg.scenario = args.scenario
    return cfg.validate()


def _print_episodes(rows, out) -> None:
    if out:
        write_csv(Path(out), EPISODE_FIELDS, rows)
    else:
        _stdout_csv(rows)
    if rows:
        means = {m: np.mean([float(r[m]) for r in rows]) for m in METRICS}
        print("mean " + "  ".join(f"{m}={v:.3f}" for m, v in means.items()), file=sys.stderr)


def _stdout_csv(rows) -> None:
    print(",".join(EPISODE_FIELDS))
    for r in rows:
        print(",".join(repr(v) if isinstance(v, float) else str(v) for v in (r[k] for k in EPISODE_FIELDS)))


def _run_traced(env, policy, seeds, gamma, trace_dir, label):
    reports = []
    for k, s in enumerate(seeds):
        reports.append(run_episode(env, policy, s, gamma))
        if trace_dir is not None:
            trace_dir.mkdir(parents=True, exist_ok=True)
            for path in env.state.trace.write(trace_dir / f"{label}_ep{k}"):
                print(f"trace: {path}", file=sys.stderr)
    return reports


def cmd_train(args) -> int:
    cfg = _base_config(args)
    if args.steps is not None:
        cfg.hyperparams = {**cfg.hyperparams, "total_train_steps": args.steps}
    cfg.eval_episodes = args.episodes
    cfg.validate()

    def progress(row):
        print(f"step {row['step']:>7} eps {row['epsilon']:.4f} loss {row['mean_td_loss']:.4g} "
              f"return {row['eval_return']:.3f} throughput {row['eval_throughput']:.1f}", file=sys.stderr)

    result = run_job(cfg, args.reward, args.seed, mass_scaling=args.mass_scaling, progress=progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_network(result.network, out / "network.npz", result.network_metadata)
    write_csv(out / "training_log.csv", TRAINING_LOG_FIELDS, result.training_log)
    write_csv(out / "episodes.csv", EPISODE_FIELDS, episode_rows([result]))
    print(f"wrote {out / 'network.npz'}, {out / 'training_log.csv'}, {out / 'episodes.csv'}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    net, meta = load_network(args.model)
    scenario = meta.get("scenario", "homogeneous")
    cfg = config_from_dict({"scenario": scenario, "sim": meta.get("sim", {})})
    kind = RewardKind.parse(meta.get("reward", "mbrf"))
    env = _env(cfg, kind, bool(meta.get("mass_scaling", False)), record_trace=args.trace is not None)
    seeds = eval_demand_seeds(scenario, args.seed, args.episodes)
    reports = _run_traced(env, greedy_policy(net), seeds, meta.get("gamma", 0.99),
                          Path(args.trace) if args.trace else None, meta.get("method", kind.value))
    result = RunResult(meta.get("method", kind.value), args.seed, reports, seeds)
    _print_episodes(episode_rows([result]), args.out)
    return 0


def cmd_baseline(args) -> int:
    cfg = _base_config(args)
    controller = ControllerKind.parse(args.controller).validate(cfg.sim_config().g_min)
    env = _env(cfg, RewardKind.MBRF, cfg.mass_scaling, record_trace=args.trace is not None)
    seeds = eval_demand_seeds(cfg.scenario, args.seed, args.episodes)
    reports = _run_traced(env, controller_policy(controller), seeds, cfg.hp().gamma,
                          Path(args.trace) if args.trace else None, controller.label.replace(":", "_"))
    _print_episodes(episode_rows([RunResult(controller.label, args.seed, reports, seeds)]), args.out)
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    cfg.validate()
    results = compare(cfg, args.out)
    print(results.table().format())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="momentum-tsc", description="Single-junction signal control experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a DQN agent with one reward")
    t.add_argument("--reward", required=True, choices=LEARNING_METHODS)
    t.add_argument("--mass-scaling", action="store_true", help="weight speeds by vehicle mass")
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--scenario", choices=SCENARIOS)
    t.add_argument("--config", help="YAML file with sim / hyperparams overrides")
    t.add_argument("--steps", type=int, help="override total_train_steps")
    t.add_argument("--episodes", type=int, default=10, help="greedy evaluation episodes after training")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a saved network")
    e.add_argument("--model", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=1)
    e.add_argument("--out", help="episodes CSV path (default: stdout)")
    e.add_argument("--trace", metavar="DIR", help="write per-step signal and vehicle traces here")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="run a classical controller")
    b.add_argument("--controller", required=True, help="maxpressure, lqf or fixed:CYCLE")
    b.add_argument("--episodes", type=int, default=10)
    b.add_argument("--seed", type=int, default=1)
    b.add_argument("--scenario", choices=SCENARIOS)
    b.add_argument("--config", help="YAML file with sim overrides")
    b.add_argument("--out", help="episodes CSV path (default: stdout)")
    b.add_argument("--trace", metavar="DIR", help="write per-step signal and vehicle traces here")
    b.set_defaults(func=cmd_baseline)

    c = sub.add_parser("compare", help="multi-method, multi-seed comparison from a config file")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--workers", type=int)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
