import csv
import json
from collections import defaultdict

import numpy as np
import pytest

from momentum_tsc.dqn import evaluate
from momentum_tsc.env import TrafficSignalEnv
from momentum_tsc.experiment import (
    DEFAULT_METHODS, EPISODE_FIELDS, METRICS, SUMMARY_FIELDS, ExperimentConfig, compare, config_from_dict,
    config_from_manifest, emit_reports, load_config, run_experiment,
)
from momentum_tsc.microsim import HETEROGENEOUS_MIXTURE, ConfigError
from momentum_tsc.neural import load_network
from momentum_tsc.rewards import RewardFunction, RewardKind

TINY = {
    "sim": {"episode_duration": 200},
    "hyperparams": {"total_train_steps": 200, "learn_start": 50, "eval_frequency": 100, "eval_episodes": 1},
    "eval_episodes": 2,
}


def _write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_empty_file_gives_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, ""))
    assert cfg == ExperimentConfig()
    assert cfg.methods == list(DEFAULT_METHODS) and cfg.seeds == [1, 2, 3] and cfg.eval_episodes == 10


def test_green_bounds_error_names_both_keys(tmp_path):
    with pytest.raises(ConfigError, match=r"sim\.g_min.*sim\.g_max"):
        load_config(_write(tmp_path, "sim:\n  g_min: 60\n  g_max: 50\n"))


def test_duplicate_seeds_rejected(tmp_path):
    with pytest.raises(ConfigError, match="duplicate seed"):
        load_config(_write(tmp_path, "seeds: [1, 1]\n"))


@pytest.mark.parametrize("text, where", [
    ("seedz: [1]\n", "seedz"),
    ("sim:\n  gmin: 3\n", "sim.gmin"),
    ("hyperparams:\n  learning_rate: 0.1\n", "hyperparams.learning_rate"),
])
def test_unknown_keys_rejected(tmp_path, text, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        load_config(_write(tmp_path, text))


def test_parse_error_reports_position(tmp_path):
    with pytest.raises(ConfigError, match=r"line 2, column \d+"):
        load_config(_write(tmp_path, "seeds: [1, 2\nmethods: [mbrf\n"))


@pytest.mark.parametrize("data, match", [
    ({"seeds": []}, "non-empty"),
    ({"seeds": [1.5]}, "integers"),
    ({"methods": ["mbrf", "nope"]}, "valid methods: mbrf, wait, queue, diff, maxpressure, lqf, fixed:CYCLE"),
    ({"methods": ["lqf", "LQF"]}, "duplicate"),
    ({"methods": ["fixed:4"]}, "cycle"),
    ({"scenario": "urban"}, "scenario"),
    ({"sim": {"g_min": "five"}}, "sim.g_min"),
    ({"hyperparams": {"gamma": 2.0}}, "gamma"),
    ([1, 2], "mapping"),
])
def test_semantic_errors(data, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(data)


def test_heterogeneous_scenario_forces_mixture_and_scaling():
    cfg = config_from_dict({"scenario": "heterogeneous"})
    assert cfg.sim_config().class_mixture == HETEROGENEOUS_MIXTURE
    assert cfg.mass_scaling
    assert not config_from_dict({}).mass_scaling
    with pytest.raises(ConfigError):
        config_from_dict({"scenario": "heterogeneous", "sim": {"class_mixture": {"car": 1.0}}})


def test_single_seed_fixed_time_table():
    cfg = config_from_dict({**TINY, "methods": ["fixed:20"], "seeds": [4]})
    table = run_experiment(cfg).table()
    rows = table.rows()
    assert len(rows) == 1 and rows[0]["method"] == "fixed:20" and rows[0]["n_seeds"] == 1
    assert all(rows[0][f"{m}_std"] == 0.0 for m in METRICS)
    assert all(rows[0][f"{m}_best"] == 1 for m in METRICS)


def test_zero_methods_write_headers_only(tmp_path):
    results = run_experiment(config_from_dict({"methods": [], "seeds": [1]}))
    paths = emit_reports(results, tmp_path)
    assert paths["summary"].read_text() == ",".join(SUMMARY_FIELDS) + "\n"
    assert paths["episodes"].read_text() == ",".join(EPISODE_FIELDS) + "\n"


def test_unwritable_output_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    results = run_experiment(config_from_dict({"methods": [], "seeds": [1]}))
    with pytest.raises(OSError, match="file"):
        emit_reports(results, blocker / "out")


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = config_from_dict({**TINY, "methods": ["mbrf", "diff", "maxpressure", "fixed:20"], "seeds": [1, 2, 3]})
    results = compare(cfg, out)
    return cfg, results, out


def test_output_layout(small_run):
    cfg, results, out = small_run
    manifest = json.loads((out / "manifest.json").read_text())
    for name in manifest["files"]:
        assert (out / name).exists()
    assert (out / "runs" / "mbrf" / "seed_2" / "training_log.csv").exists()
    log = _read_csv(out / "runs" / "diff" / "seed_1" / "training_log.csv")
    assert [int(r["step"]) for r in log] == [0, 100, 200]
    assert len(_read_csv(out / "episodes.csv")) == 4 * 3 * 2


def test_summary_matches_naive_recomputation(small_run):
    _, _, out = small_run
    per_seed = defaultdict(lambda: defaultdict(list))
    for r in _read_csv(out / "episodes.csv"):
        for m in METRICS:
            per_seed[(r["method"], r["seed"])][m].append(float(r[m]))
    for row in _read_csv(out / "summary.csv"):
        for m in METRICS:
            seed_means = [sum(v[m]) / len(v[m]) for (method, _), v in per_seed.items() if method == row["method"]]
            mean = sum(seed_means) / len(seed_means)
            std = (sum((x - mean) ** 2 for x in seed_means) / len(seed_means)) ** 0.5
            assert float(row[f"{m}_mean"]) == pytest.approx(mean, rel=1e-12, abs=1e-12)
            assert float(row[f"{m}_std"]) == pytest.approx(std, rel=1e-9, abs=1e-9)


def test_best_markers(small_run):
    _, _, out = small_run
    rows = _read_csv(out / "summary.csv")
    for m in METRICS:
        vals = [float(r[f"{m}_mean"]) for r in rows]
        best = max(vals) if m == "throughput" else min(vals)
        assert [int(r[f"{m}_best"]) for r in rows] == [int(v == best) for v in vals]


def test_evaluation_demand_shared_across_methods(small_run):
    _, _, out = small_run
    seeds = defaultdict(set)
    for r in _read_csv(out / "episodes.csv"):
        seeds[(r["seed"], r["episode"])].add(r["demand_seed"])
    assert all(len(v) == 1 for v in seeds.values())


def test_manifest_round_trip_reproduces_outputs(small_run, tmp_path):
    _, _, out = small_run
    cfg = config_from_manifest(out / "manifest.json")
    compare(cfg, tmp_path)
    for name in ("summary.csv", "episodes.csv", "manifest.json", "runs/mbrf/seed_3/network.npz"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_parallel_workers_give_identical_bytes(small_run, tmp_path):
    cfg, _, out = small_run
    cfg2 = config_from_dict({**TINY, "methods": ["mbrf", "diff", "maxpressure", "fixed:20"],
                             "seeds": [1, 2, 3], "workers": 2})
    compare(cfg2, tmp_path)
    for name in ("summary.csv", "episodes.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_saved_network_replays_logged_return(small_run):
    cfg, results, out = small_run
    net, meta = load_network(out / "runs" / "mbrf" / "seed_1" / "network.npz")
    ecfg = config_from_dict({"scenario": meta["scenario"], "sim": meta["sim"]})
    env = TrafficSignalEnv(ecfg.sim_config(), RewardFunction(RewardKind.parse(meta["reward"]), meta["mass_scaling"]))
    reports = evaluate(net, env, meta["train_eval_seeds"], meta["gamma"])
    assert np.mean([r.episode_return for r in reports]) == meta["train_eval_return"]
    log = _read_csv(out / "runs" / "mbrf" / "seed_1" / "training_log.csv")
    assert float(log[-1]["eval_return"]) == meta["train_eval_return"]
    # and the episodes.csv rows for this run replay exactly too
    rows = [r for r in _read_csv(out / "episodes.csv") if r["method"] == "mbrf" and r["seed"] == "1"]
    replay = evaluate(net, env, [int(r["demand_seed"]) for r in rows], meta["gamma"])
    assert [repr(r.episode_return) for r in replay] == [r["episode_return"] for r in rows]
