"""Multi-seed comparison runs: config loading, orchestration and report files.

Config file keys (YAML, every key optional):

    scenario       homogeneous | heterogeneous            (homogeneous)
    methods        list of mbrf, wait, queue, diff,
                   maxpressure, lqf, fixed:CYCLE          (the first six)
    seeds          non-empty list of distinct integers     ([1, 2, 3])
    eval_episodes  greedy evaluation episodes per run      (10)
    workers        parallel method x seed jobs             (1)
    out_dir        output directory, --out overrides it    (none)
    sim            SimConfig overrides, e.g. g_min, arrival_rate_range
    hyperparams    Hyperparams overrides, e.g. total_train_steps

``heterogeneous`` fixes the 50/20/15/15 car/truck/bus/motorcycle mix and turns
on mass scaling in the momentum reward, so neither can be set by hand.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .baselines import ControllerKind
from .dqn import Hyperparams, TRAINING_LOG_FIELDS, evaluate, run_training
from .env import TrafficSignalEnv, controller_policy, run_episode
from .microsim import HETEROGENEOUS_MIXTURE, ConfigError, SimConfig
from .neural import QNetwork, save_network
from .rewards import RewardFunction, RewardKind
from .seeding import derive_seed

log = logging.getLogger(__name__)

SCENARIOS = ("homogeneous", "heterogeneous")
LEARNING_METHODS = ("mbrf", "wait", "queue", "diff")
CLASSICAL_METHODS = ("maxpressure", "lqf")
DEFAULT_METHODS = LEARNING_METHODS + CLASSICAL_METHODS
VALID_METHODS = LEARNING_METHODS + CLASSICAL_METHODS + ("fixed:CYCLE",)

# SimConfig fields a config file may override; the rest are owned by the scenario
SIM_KEYS = tuple(f.name for f in fields(SimConfig) if f.name not in ("class_mixture", "vehicle_classes", "seed"))
HP_KEYS = tuple(f.name for f in fields(Hyperparams))
TOP_KEYS = ("scenario", "methods", "seeds", "eval_episodes", "workers", "out_dir", "sim", "hyperparams")

METRICS = ("mean_waiting", "mean_queue", "throughput", "mean_travel_time", "co2_total")
HIGHER_IS_BETTER = {"throughput"}
EPISODE_FIELDS = ["method", "seed", "episode", "demand_seed", *METRICS, "episode_return", "spawned", "blocked"]
SUMMARY_FIELDS = ["method", "n_seeds"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std", "best")]

MANIFEST_FORMAT = "momentum_tsc.experiment"
MANIFEST_VERSION = 1


# --- method names -------------------------------------------------------------

def parse_method(name: str):
    """``RewardKind`` for learning methods, ``ControllerKind`` for classical ones."""
    if not isinstance(name, str):
        raise ConfigError(f"methods: expected a string, got {name!r}")
    key = name.strip().lower()
    if key in LEARNING_METHODS:
        return RewardKind.parse(key)
    if key in CLASSICAL_METHODS or key.startswith("fixed:"):
        try:
            return ControllerKind.parse(key)
        except ValueError:
            pass
    raise ConfigError(f"unknown method {name!r}; valid methods: {', '.join(VALID_METHODS)}")


def method_label(name: str) -> str:
    kind = parse_method(name)
    return kind.value if isinstance(kind, RewardKind) else kind.label


def is_learning(name: str) -> bool:
    return isinstance(parse_method(name), RewardKind)


# --- configuration ------------------------------------------------------------

@dataclass
class ExperimentConfig:
    scenario: str = "homogeneous"
    methods: list = field(default_factory=lambda: list(DEFAULT_METHODS))
    seeds: list = field(default_factory=lambda: [1, 2, 3])
    eval_episodes: int = 10
    workers: int = 1
    out_dir: Optional[str] = None
    sim: dict = field(default_factory=dict)
    hyperparams: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario: must be one of {', '.join(SCENARIOS)}, got {self.scenario!r}")
        for key in self.sim:
            if key not in SIM_KEYS:
                raise ConfigError(f"sim.{key}: unknown key; valid keys: {', '.join(SIM_KEYS)}")
        for key in self.hyperparams:
            if key not in HP_KEYS:
                raise ConfigError(f"hyperparams.{key}: unknown key; valid keys: {', '.join(HP_KEYS)}")
        try:
            self.sim_config().validate()
        except ConfigError as exc:
            raise ConfigError(_prefix_keys(str(exc), 'sim.', SIM_KEYS)) from None
        try:
            self.hp().validate()
        except ValueError as exc:
            raise ConfigError(_prefix_keys(str(exc), 'hyperparams.', HP_KEYS)) from None
        labels = [method_label(m) for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"methods: duplicate entries in {self.methods}")
        for m in self.methods:
            kind = parse_method(m)
            if isinstance(kind, ControllerKind):
                try:
                    kind.validate(self.sim_config().g_min)
                except ValueError as exc:
                    raise ConfigError(f"methods: {exc}") from None
        if not self.seeds:
            raise ConfigError("seeds: must be non-empty")
        for s in self.seeds:
            if isinstance(s, bool) or not isinstance(s, (int, np.integer)):
                raise ConfigError(f"seeds: expected integers, got {s!r}")
        dupes = sorted({s for s in self.seeds if self.seeds.count(s) > 1})
        if dupes:
            raise ConfigError(f"seeds: duplicate seed(s) {dupes}")
        if self.eval_episodes < 0:
            raise ConfigError("eval_episodes: must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        return self

    @property
    def mass_scaling(self) -> bool:
        return self.scenario == "heterogeneous"

    def sim_config(self) -> SimConfig:
        overrides = dict(self.sim)
        if "arrival_rate_range" in overrides:
            overrides["arrival_rate_range"] = tuple(overrides["arrival_rate_range"])
        cfg = replace(SimConfig(), **overrides)
        if self.scenario == "heterogeneous":
            cfg = replace(cfg, class_mixture=dict(HETEROGENEOUS_MIXTURE))
        return cfg

    def hp(self) -> Hyperparams:
        overrides = dict(self.hyperparams)
        if "hidden" in overrides:
            overrides["hidden"] = tuple(overrides["hidden"])
        return replace(Hyperparams(), **overrides)

    def resolved(self) -> dict:
        """Every setting spelled out, in config-file form (no output directory)."""
        sim = self.sim_config().to_dict()
        return {
            "scenario": self.scenario,
            "methods": [method_label(m) for m in self.methods],
            "seeds": [int(s) for s in self.seeds],
            "eval_episodes": self.eval_episodes,
            "workers": self.workers,
            "sim": {k: sim[k] for k in SIM_KEYS},
            "hyperparams": self.hp().to_dict(),
        }


def _prefix_keys(message: str, prefix: str, keys) -> str:
    # "g_min (60) must be < g_max (50)" -> "sim.g_min (60) must be < sim.g_max (50)"
    words = message.split(" ")
    return " ".join(prefix + w if w in keys else w for w in words)


def _coerce(path: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, (tuple, list)):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        if isinstance(default, tuple) and path.endswith("arrival_rate_range") and len(value) != 2:
            raise ConfigError(f"{path}: expected [low, high], got {value!r}")
        proto = default[0] if default else 0
        return [_coerce(f"{path}[{i}]", v, proto) for i, v in enumerate(value)]
    return value


def config_from_dict(data: Optional[dict], source: str = "<config>") -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping, got {type(data).__name__}")
    unknown = [k for k in data if k not in TOP_KEYS]
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key; valid keys: {', '.join(TOP_KEYS)}")
    defaults = ExperimentConfig()
    kwargs = {}
    for key in ("scenario", "out_dir"):
        if key in data:
            if not isinstance(data[key], str):
                raise ConfigError(f"{key}: expected a string, got {data[key]!r}")
            kwargs[key] = data[key]
    for key in ("eval_episodes", "workers"):
        if key in data:
            kwargs[key] = _coerce(key, data[key], getattr(defaults, key))
    if "methods" in data:
        if not isinstance(data["methods"], list):
            raise ConfigError(f"methods: expected a list, got {data['methods']!r}")
        kwargs["methods"] = list(data["methods"])
    if "seeds" in data:
        if not isinstance(data["seeds"], list):
            raise ConfigError(f"seeds: expected a list, got {data['seeds']!r}")
        kwargs["seeds"] = list(data["seeds"])
    for section, keys, proto in (("sim", SIM_KEYS, SimConfig()), ("hyperparams", HP_KEYS, Hyperparams())):
        block = data.get(section)
        if block is None:
            continue
        if not isinstance(block, dict):
            raise ConfigError(f"{section}: expected a mapping, got {block!r}")
        values = {}
        for key, value in block.items():
            if key not in keys:
                raise ConfigError(f"{section}.{key}: unknown key; valid keys: {', '.join(keys)}")
            values[key] = _coerce(f"{section}.{key}", value, getattr(proto, key))
        kwargs[section] = values
    return ExperimentConfig(**kwargs).validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: parse error at {where}: {exc.problem or exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None
    return config_from_dict(data, str(path))


def config_from_manifest(path) -> ExperimentConfig:
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"{path}: not an experiment manifest")
    return config_from_dict(manifest["config"], str(path))


# --- running ----------------------------------------------------------------

def eval_demand_seeds(scenario: str, seed: int, episodes: int) -> list:
    """Evaluation demand seeds; shared by every method so comparisons see the same traffic."""
    return [derive_seed(scenario, int(seed), "eval", k) for k in range(episodes)]


def agent_seed(scenario: str, method: str, seed: int) -> int:
    return derive_seed(scenario, method_label(method), int(seed))


@dataclass
class RunResult:
    method: str
    seed: int
    episodes: list                      # EpisodeReport per evaluation episode
    demand_seeds: list
    training_log: list = field(default_factory=list)
    network: Optional[QNetwork] = None
    network_metadata: dict = field(default_factory=dict)


@dataclass
class ExperimentResults:
    config: ExperimentConfig
    runs: list                          # RunResult in (method, seed) config order

    def table(self) -> "ComparisonTable":
        return ComparisonTable.from_runs(self.config.methods, self.runs)


def _env(config: ExperimentConfig, reward_kind: RewardKind, mass_scaling: bool,
         record_trace: bool = False) -> TrafficSignalEnv:
    return TrafficSignalEnv(config.sim_config(), RewardFunction(reward_kind, mass_scaling=mass_scaling),
                            record_trace=record_trace)


def run_job(config: ExperimentConfig, method: str, seed: int, mass_scaling: bool = False,
            progress=None) -> RunResult:
    """Train (learning methods) and evaluate one method on one seed.

    ``mass_scaling`` can only add mass weighting; the heterogeneous scenario always has it.
    """
    mass_scaling = mass_scaling or config.mass_scaling
    kind = parse_method(method)
    label = method_label(method)
    hp = config.hp()
    demand = eval_demand_seeds(config.scenario, seed, config.eval_episodes)
    if isinstance(kind, RewardKind):
        run_seed = agent_seed(config.scenario, method, seed)
        agent, training_log = run_training(lambda: _env(config, kind, mass_scaling), hp, run_seed, progress)
        reports = evaluate(agent.online, _env(config, kind, mass_scaling), demand, hp.gamma)
        final = training_log[-1]
        meta = {
            "method": label, "seed": int(seed), "scenario": config.scenario,
            "reward": kind.value, "mass_scaling": mass_scaling,
            "gamma": hp.gamma, "sim": config.resolved()["sim"],
            "train_steps": agent.env_steps,
            "train_eval_seeds": [derive_seed(run_seed, "train-eval", i) for i in range(hp.eval_episodes)],
            "train_eval_return": final["eval_return"],
        }
        return RunResult(label, int(seed), reports, demand, training_log, agent.online, meta)
    # classical controllers are scored with the momentum reward so the return column is comparable
    env = _env(config, RewardKind.MBRF, mass_scaling)
    policy = controller_policy(kind)
    reports = [run_episode(env, policy, s, hp.gamma) for s in demand]
    return RunResult(label, int(seed), reports, demand)


def run_experiment(config: ExperimentConfig) -> ExperimentResults:
    config.validate()
    jobs = [(m, s) for m in config.methods for s in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(jobs))) as pool:
            futures = [pool.submit(run_job, config, m, s) for m, s in jobs]
            runs = [f.result() for f in futures]
    else:
        runs = []
        for m, s in jobs:
            log.info("running %s seed %s", method_label(m), s)
            runs.append(run_job(config, m, s))
    return ExperimentResults(config, runs)


# --- aggregation ---------------------------------------------------------------

@dataclass
class ComparisonTable:
    """Per-method mean and population std over seeds of the per-seed episode means."""
    methods: list
    n_seeds: list
    means: np.ndarray                   # (methods, metrics)
    stds: np.ndarray
    best: np.ndarray                    # bool, best value per column

    @classmethod
    def from_runs(cls, methods, runs) -> "ComparisonTable":
        labels = [method_label(m) for m in methods]
        means = np.zeros((len(labels), len(METRICS)))
        stds = np.zeros_like(means)
        counts = []
        for i, label in enumerate(labels):
            per_seed = np.array([[np.mean([getattr(ep, k) for ep in r.episodes]) if r.episodes else np.nan
                                  for k in METRICS] for r in runs if r.method == label])
            counts.append(len(per_seed))
            if len(per_seed):
                means[i] = per_seed.mean(axis=0)
                stds[i] = per_seed.std(axis=0)
        best = np.zeros(means.shape, dtype=bool)
        if len(labels):
            for j, k in enumerate(METRICS):
                col = means[:, j]
                if np.all(np.isnan(col)):
                    continue
                target = np.nanmax(col) if k in HIGHER_IS_BETTER else np.nanmin(col)
                best[:, j] = col == target
        return cls(labels, counts, means, stds, best)

    def rows(self) -> list:
        out = []
        for i, label in enumerate(self.methods):
            row = {"method": label, "n_seeds": self.n_seeds[i]}
            for j, k in enumerate(METRICS):
                row[f"{k}_mean"] = float(self.means[i, j])
                row[f"{k}_std"] = float(self.stds[i, j])
                row[f"{k}_best"] = int(self.best[i, j])
            out.append(row)
        return out

    def format(self) -> str:
        """Plain-text table; best value per column is wrapped in asterisks."""
        head = ["method"] + list(METRICS)
        lines = [head]
        for i, label in enumerate(self.methods):
            cells = [label]
            for j in range(len(METRICS)):
                cell = f"{self.means[i, j]:.1f} ± {self.stds[i, j]:.1f}"
                cells.append(f"*{cell}*" if self.best[i, j] else cell)
            lines.append(cells)
        widths = [max(len(r[c]) for r in lines) for c in range(len(head))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in lines)


# --- output --------------------------------------------------------------------

def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(row[k]) for k in header])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def episode_rows(runs) -> list:
    rows = []
    for r in runs:
        for k, (rep, demand) in enumerate(zip(r.episodes, r.demand_seeds)):
            d = rep.as_dict()
            rows.append({"method": r.method, "seed": r.seed, "episode": k, "demand_seed": demand,
                         **{m: d[m] for m in METRICS}, "episode_return": d["episode_return"],
                         "spawned": d["spawned"], "blocked": d["blocked"]})
    return rows


def run_dir(out: Path, method: str, seed: int) -> Path:
    return out / "runs" / method / f"seed_{seed}"


def emit_reports(results: ExperimentResults, out_dir) -> dict:
    """Write summary, episodes, per-run logs and networks, and the manifest; returns the paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    paths = {"summary": out / "summary.csv", "episodes": out / "episodes.csv", "manifest": out / "manifest.json"}
    write_csv(paths["summary"], SUMMARY_FIELDS, results.table().rows())
    write_csv(paths["episodes"], EPISODE_FIELDS, episode_rows(results.runs))
    files = ["summary.csv", "episodes.csv"]
    for r in results.runs:
        if r.network is None:
            continue
        d = run_dir(out, r.method, r.seed)
        d.mkdir(parents=True, exist_ok=True)
        write_csv(d / "training_log.csv", TRAINING_LOG_FIELDS, r.training_log)
        save_network(r.network, d / "network.npz", r.network_metadata)
        files += [str((d / name).relative_to(out)) for name in ("training_log.csv", "network.npz")]
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "config": results.config.resolved(),
        "eval_demand_seeds": {str(s): eval_demand_seeds(results.config.scenario, s, results.config.eval_episodes)
                              for s in results.config.seeds},
        "agent_seeds": {method_label(m): {str(s): agent_seed(results.config.scenario, m, s)
                                          for s in results.config.seeds}
                        for m in results.config.methods if is_learning(m)},
        "files": files,
    }
    try:
        paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {paths['manifest']}: {exc.strerror or exc}") from exc
    return paths


def read_episodes(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def compare(config: ExperimentConfig, out_dir=None) -> ExperimentResults:
    out = out_dir or config.out_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set out_dir")
    results = run_experiment(config)
    emit_reports(results, out)
    return results

