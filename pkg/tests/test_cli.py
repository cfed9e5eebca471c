import csv
import json

import numpy as np
import pytest

from nrslab.cli import main
from nrslab.experiment import (SUMMARY_COLUMNS, ExperimentConfig, expand_runs, run_experiment,
                               select_best)
from nrslab.network import MlpSpec, load_checkpoint, save_checkpoint
from nrslab.trainer import ConfigError

MOONS = {"generator": "two_moons", "n": 120, "noise_sd": 0.2, "seed": 0, "test_fraction": 0.25}


def make_config(tmp_path, **overrides):
    cfg = {
        "dataset": MOONS,
        "model": {"layer_widths": [2, 8, 2], "activation": "relu"},
        "train": {"base_lr": 0.05, "batch_size": 30, "num_workers": 2, "epochs": 2},
        "grid": {"epsilon": [0.1, 0.5], "alpha": [1.0]},
        "analysis": {"hessian": True, "scope": "last_layer", "tol": 1e-10},
        "strategies": ["baseline"],
        "seeds": [0],
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def read_summary(out):
    with open(out / "summary.csv") as f:
        return list(csv.DictReader(f))


def test_single_baseline_run(tmp_path, capsys):
    path = make_config(tmp_path)
    assert main(["run", str(path)]) == 0
    rows = read_summary(tmp_path / "out")
    assert len(rows) == 1
    assert list(rows[0]) == SUMMARY_COLUMNS
    assert float(rows[0]["lambda_max"]) > 0
    run_dir = tmp_path / "out" / "runs" / "baseline_eps0_alpha0_seed0"
    assert {p.name for p in run_dir.iterdir()} == {"report.json", "epochs.csv", "model.ckpt",
                                                  "spectrum.csv"}
    with open(run_dir / "epochs.csv") as f:
        header = next(csv.reader(f))
    assert header == ["epoch", "step", "lr", "loss_total", "loss_empirical", "loss_divergence",
                      "loss_neighbor", "train_acc", "test_acc"]
    assert "baseline" in capsys.readouterr().out


def test_grid_expansion_count(tmp_path):
    path = make_config(tmp_path, strategies=["baseline", "rpr", "nrs"], seeds=[0, 1, 2],
                       grid={"epsilon": [0.1, 0.5]})
    cfg = ExperimentConfig.load(path)
    runs = expand_runs(cfg)
    assert len(runs) == 1 * 3 + 2 * 3 + 2 * 1 * 3 == 15
    assert {r.alpha for r in runs if r.strategy == "rpr"} == {0.0}


def test_grid_run_writes_one_row_per_run(tmp_path):
    path = make_config(tmp_path, strategies=["baseline", "rpr", "nrs"], seeds=[0, 1, 2],
                       grid={"epsilon": [0.1, 0.5]}, analysis={"hessian": False},
                       train={"batch_size": 30, "epochs": 1})
    assert main(["run", str(path)]) == 0
    rows = read_summary(tmp_path / "out")
    assert len(rows) == 15
    assert all(r["lambda_max"] == "" for r in rows)


@pytest.mark.parametrize("patch,key", [
    ({"colour": 1}, "colour"),
    ({"train": {"batch_size": 30, "lr": 0.1}}, "lr"),
    ({"dataset": {**MOONS, "noise": 0.1}}, "noise"),
    ({"grid": {"epsilon": [0.1], "rho": [1]}}, "rho"),
])
def test_unknown_key_is_named(tmp_path, capsys, patch, key):
    path = make_config(tmp_path, **patch)
    assert main(["run", str(path)]) == 1
    assert key in capsys.readouterr().err


@pytest.mark.parametrize("patch", [{"seeds": []}, {"grid": {"epsilon": []}},
                                   {"strategies": ["sam"]}, {"strategies": []}])
def test_invalid_blocks_rejected(tmp_path, patch):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(make_config(tmp_path, **patch))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_runtime_error_exit_code(tmp_path, capsys):
    # an absurd learning rate overflows the parameters within a few steps
    path = make_config(tmp_path, strategies=["baseline", "nrs"], grid={"epsilon": [0.1], "alpha": [1.0]},
                       seeds=[0], train={"batch_size": 30, "epochs": 1, "base_lr": 1e300})
    code = main(["run", str(path)])
    assert code == 2
    assert "runtime error" in capsys.readouterr().err


def test_embedded_config_reproduces_metrics(tmp_path):
    path = make_config(tmp_path, strategies=["nrs"], grid={"epsilon": [0.5], "alpha": [2.0]})
    cfg = ExperimentConfig.load(path)
    rows = run_experiment(cfg, echo=None)
    report = json.loads((tmp_path / "out" / "runs" / "nrs_eps0.5_alpha2_seed0" / "report.json").read_text())
    again = ExperimentConfig.from_dict(report["experiment"])
    rows2 = run_experiment(again, output_dir=tmp_path / "again", echo=None)
    for key in ("final_train_acc", "final_test_acc", "best_test_acc", "lambda_max"):
        assert rows[0][key] == rows2[0][key]
    report2 = json.loads((tmp_path / "again" / "runs" / "nrs_eps0.5_alpha2_seed0" / "report.json").read_text())
    assert report["records"] == report2["records"]
    _, p1 = load_checkpoint(tmp_path / "out" / "runs" / "nrs_eps0.5_alpha2_seed0" / "model.ckpt")
    _, p2 = load_checkpoint(tmp_path / "again" / "runs" / "nrs_eps0.5_alpha2_seed0" / "model.ckpt")
    assert p1.tobytes() == p2.tobytes()


def test_output_dir_env_override(tmp_path, monkeypatch):
    path = make_config(tmp_path, analysis={"hessian": False})
    monkeypatch.setenv("NRSLAB_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["run", str(path)]) == 0
    assert (tmp_path / "env" / "summary.csv").exists()
    assert not (tmp_path / "out").exists()


def test_select_best_prefers_higher_mean_accuracy():
    rows = [
        {"strategy": "rpr", "epsilon": 0.1, "alpha": 0.0, "seed": 0, "best_test_acc": 0.8},
        {"strategy": "rpr", "epsilon": 0.5, "alpha": 0.0, "seed": 0, "best_test_acc": 0.9},
        {"strategy": "rpr", "epsilon": 0.9, "alpha": 0.0, "seed": 0, "best_test_acc": 0.9},
    ]
    assert select_best(rows)["rpr"]["epsilon"] == 0.5


# -- analyze -----------------------------------------------------------------

def test_analyze_zero_linear_model(tmp_path, capsys):
    spec = MlpSpec((2, 2))
    ckpt = tmp_path / "zero.ckpt"
    save_checkpoint(ckpt, spec, np.zeros(spec.num_params))
    args = ["analyze", str(ckpt), "--data", json.dumps(MOONS), "--scope", "last_layer",
            "--tol", "1e-10", "--output-dir", str(tmp_path)]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first
    with open(tmp_path / "analysis.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2 and rows[0] == rows[1]
    assert list(rows[0]) == ["scope", "lambda_max", "residual", "iterations"]
    assert float(rows[0]["lambda_max"]) >= 0


def test_analyze_full_scope_and_data_file(tmp_path, capsys):
    spec = MlpSpec((2, 4, 2))
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, spec, np.random.default_rng(0).standard_normal(spec.num_params))
    data = tmp_path / "data.json"
    data.write_text(json.dumps({"dataset": MOONS}))
    assert main(["analyze", str(ckpt), "--data", str(data), "--scope", "full", "--tol", "1e-6",
                 "--output-dir", str(tmp_path)]) == 0
    assert "scope=full_model" in capsys.readouterr().out


def test_analyze_shape_mismatch(tmp_path, capsys):
    spec = MlpSpec((3, 2))
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, spec, np.zeros(spec.num_params))
    assert main(["analyze", str(ckpt), "--data", json.dumps(MOONS), "--output-dir", str(tmp_path)]) == 2
    assert "features" in capsys.readouterr().err


def test_analyze_bad_data_block(tmp_path):
    assert main(["analyze", "x.ckpt", "--data", '{"generator": "cifar"}']) == 1
