import json
import subprocess
import sys

import numpy as np
import pytest

from risklfc.harness import io
from risklfc.harness.cli import main, run_experiment
from risklfc.lfc_model import TraceDisturbance

SMALL = {
    "graph": {"n_areas": 3},
    "output": {"include_frequency": True},
    "cost": {"Q": 1.0, "R": 0.1, "delta": 0.0, "Lambda": 5.0},
    "disturbance": {"type": "gaussian", "std": 30.0, "stats_samples": 5000},
    "train": {"eta": 1e-4, "r": 0.1, "M": 4, "J": 3, "horizon": 500, "burn_in": 50, "seed": 1,
              "antithetic": True, "log_evaluator": "lyapunov", "snapshot_every": 2},
    "scenario": {"duration": 5.0, "steps": [[3, 1.0, 0.1]]},
    "robustness": {"fractions": [0.1, 0.2]},
    "output_dir": "out",
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_train_outputs(config, tmp_path, capsys):
    assert run_experiment(config, "train") == 0
    out = tmp_path / "out"
    log = io.read_train_log_csv(out / "train_log.csv")
    assert list(log["iter"]) == [0, 1, 2, 3]
    assert set(log["lambda"]) <= {0.0, 5.0}
    K = io.read_gain_json(out / "K_final.json")
    assert not K.values[~K.pattern.mask].any()
    assert [j for j, _ in io.read_snapshots_json(out / "K_snapshots.json")] == [0, 2, 3]
    assert "final r0" in capsys.readouterr().out


def test_seed_override(config, tmp_path):
    run_experiment(config, "train", out=tmp_path / "a")
    run_experiment(config, "train", out=tmp_path / "b")
    run_experiment(config, "train", seed=2, out=tmp_path / "c")
    a, b, c = ((tmp_path / d / "K_final.json").read_bytes() for d in "abc")
    assert a == b and a != c


def test_downstream_commands(config, tmp_path, capsys):
    assert run_experiment(config, "train") == 0
    assert run_experiment(config, "simulate") == 0
    header, data = io.read_trajectory_csv(tmp_path / "out" / "trajectory.csv")
    assert len(header) == 1 + 12 + 3 + 3 and data.shape[0] == 500
    assert run_experiment(config, "eval-cost", horizon=2000, **{"burn-in": 100, "rollouts": 1}) == 0
    costs = json.loads((tmp_path / "out" / "eval_cost.json").read_text())
    assert costs["stable"] and costs["lyapunov r0"] > 0
    assert run_experiment(config, "robustness") == 0
    report = json.loads((tmp_path / "out" / "robustness.json").read_text())
    assert [e["fraction"] for e in report["entries"]] == [0.1, 0.2]


def test_explicit_gain(config, tmp_path):
    assert run_experiment(config, "simulate", gain=tmp_path / "missing.json") == 2


def test_stats_from_trace(config, tmp_path):
    samples = np.random.default_rng(0).standard_normal((4000, 3))
    TraceDisturbance(samples).to_csv(tmp_path / "trace.csv")
    assert run_experiment(config, "stats", trace=tmp_path / "trace.csv") == 0
    stats = json.loads((tmp_path / "out" / "noise_stats.json").read_text())
    assert stats["n_samples"] == 4000
    W = np.array(stats["W"])
    assert W.shape == (12, 12) and W[0, 0] == pytest.approx(np.var(samples[:, 0]) * 1e-6, rel=1e-9)


def test_invalid_config_lists_problems(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"graph": {"n_areas": -1}, "train": {"r": -1}, "cost": {"R": 0.0}}))
    assert main(["train", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert "graph.n_areas" in err and "r must be > 0" in err and "R_u" in err


def test_missing_config(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == 1


def test_console_entry_point(config):
    result = subprocess.run([sys.executable, "-m", "risklfc.harness.cli", "--help"], capture_output=True, text=True)
    assert result.returncode == 0
    for command in ("train", "simulate", "eval-cost", "robustness", "stats"):
        assert command in result.stdout
