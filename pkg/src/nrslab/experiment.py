"""Strategy comparison experiments driven by a JSON config.

A config has these top-level keys::

    {
      "dataset":    {"generator": "two_moons", "n": 2000, "noise_sd": 0.25, "seed": 0},
      "model":      {"layer_widths": [2, 64, 64, 2], "activation": "relu"},
      "train":      {...TrainConfig fields except strategy / global_seed...},
      "grid":       {"epsilon": [0.05, 0.1, 0.5], "alpha": [0.5, 1.0, 2.0]},
      "analysis":   {"hessian": true, "scope": "last_layer", "tol": 1e-10},
      "strategies": ["baseline", "rpr", "nrs"],
      "seeds":      [0, 1, 2],
      "output_dir": "runs/moons"
    }

Grid expansion: baseline runs once per seed, rpr once per (epsilon, seed), nrs
once per (epsilon, alpha, seed).
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import os
import statistics
import time
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .data import Dataset, gen_blobs, gen_two_moons, load_idx_dataset, standardize, train_test_split
from .hessian import SPECTRUM_COLUMNS, SpectrumResult, full_lambda_max, last_layer_lambda_max
from .network import MlpSpec, save_checkpoint
from .objective import STRATEGIES
from .trainer import CSV_COLUMNS, ConfigError, TrainConfig, TrainingReport, train

log = logging.getLogger(__name__)

OUTPUT_ENV = "NRSLAB_OUTPUT_DIR"

SUMMARY_COLUMNS = ["strategy", "epsilon", "alpha", "seed", "final_train_acc",
                   "final_test_acc", "best_test_acc", "lambda_max", "wall_seconds"]

TOP_KEYS = {"dataset", "model", "train", "grid", "analysis", "strategies", "seeds", "output_dir"}
DATASET_KEYS = {
    "two_moons": {"generator", "n", "noise_sd", "seed", "test_fraction", "standardize"},
    "blobs": {"generator", "n", "centers", "spread", "seed", "test_fraction", "standardize"},
    "idx": {"generator", "train_images", "train_labels", "test_images", "test_labels",
            "subset", "test_fraction", "seed", "standardize"},
}
MODEL_KEYS = {"layer_widths", "activation"}
GRID_KEYS = {"epsilon", "alpha"}
ANALYSIS_KEYS = {"hessian", "scope", "tol", "max_iter"}
RESERVED_TRAIN_KEYS = {"strategy", "global_seed"}
SCOPES = ("last_layer", "full")


def _reject_unknown(block: dict, allowed: set, where: str):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    for key in block:
        if key not in allowed:
            raise ConfigError(f"unknown key {where}.{key}" if where else f"unknown key {key}")


@dataclass
class ExperimentConfig:
    dataset: dict
    model: MlpSpec
    train: dict
    grid: dict
    analysis: dict
    strategies: list
    seeds: list
    output_dir: str = "nrs_runs"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _reject_unknown(raw, TOP_KEYS, "")
        for key in ("dataset", "model", "train", "seeds"):
            if key not in raw:
                raise ConfigError(f"missing key {key}")
        ds = dict(raw["dataset"])
        gen = ds.get("generator")
        if gen not in DATASET_KEYS:
            raise ConfigError(f"dataset.generator must be one of {sorted(DATASET_KEYS)}")
        _reject_unknown(ds, DATASET_KEYS[gen], "dataset")

        _reject_unknown(raw["model"], MODEL_KEYS, "model")
        try:
            model = MlpSpec(tuple(raw["model"]["layer_widths"]),
                            raw["model"].get("activation", "relu"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from exc

        tr = dict(raw["train"])
        for key in tr:
            if key in RESERVED_TRAIN_KEYS:
                raise ConfigError(f"train.{key} is set per run; use strategies/seeds")
        try:
            TrainConfig.from_dict(tr)
        except ConfigError as exc:
            raise ConfigError(f"train: {exc}") from exc
        except TypeError as exc:
            raise ConfigError(f"train: {exc}") from exc

        grid = dict(raw.get("grid") or {})
        _reject_unknown(grid, GRID_KEYS, "grid")
        for key, vals in grid.items():
            if not isinstance(vals, list) or not vals:
                raise ConfigError(f"grid.{key} must be a nonempty list")

        analysis = {"hessian": False, "scope": "last_layer", "tol": 1e-10, "max_iter": 100_000}
        given = raw.get("analysis") or {}
        _reject_unknown(given, ANALYSIS_KEYS, "analysis")
        analysis.update(given)
        if analysis["scope"] not in SCOPES:
            raise ConfigError(f"analysis.scope must be one of {SCOPES}")

        strategies = list(raw.get("strategies", ["baseline", "rpr", "nrs"]))
        if not strategies or any(s not in STRATEGIES for s in strategies):
            raise ConfigError(f"strategies must be a nonempty subset of {STRATEGIES}")
        seeds = raw["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds must be a nonempty list of ints")
        return cls(ds, model, tr, grid, analysis, strategies, list(seeds),
                   str(raw.get("output_dir", "nrs_runs")))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "dataset": copy.deepcopy(self.dataset),
            "model": {"layer_widths": list(self.model.layer_widths),
                      "activation": self.model.activation},
            "train": dict(self.train),
            "grid": copy.deepcopy(self.grid),
            "analysis": dict(self.analysis),
            "strategies": list(self.strategies),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }


@dataclass(frozen=True)
class RunSpec:
    strategy: str
    epsilon: float
    alpha: float
    seed: int

    @property
    def name(self) -> str:
        return f"{self.strategy}_eps{self.epsilon:g}_alpha{self.alpha:g}_seed{self.seed}"


def expand_runs(cfg: ExperimentConfig) -> list[RunSpec]:
    eps_grid = cfg.grid.get("epsilon", [cfg.train.get("epsilon", 0.0)])
    alpha_grid = cfg.grid.get("alpha", [cfg.train.get("alpha", 0.0)])
    runs = []
    for strategy in cfg.strategies:
        if strategy == "baseline":
            points = [(0.0, 0.0)]
        elif strategy == "rpr":
            points = [(float(e), 0.0) for e in eps_grid]
        else:
            points = [(float(e), float(a)) for e, a in product(eps_grid, alpha_grid)]
        for (eps, alpha), seed in product(points, cfg.seeds):
            runs.append(RunSpec(strategy, eps, alpha, seed))
    return runs


def load_datasets(block: dict) -> tuple[Dataset, Dataset]:
    """Train/test split for a dataset block; standardized by train statistics."""
    gen = block["generator"]
    seed = int(block.get("seed", 0))
    test_fraction = float(block.get("test_fraction", 0.2))
    if gen == "two_moons":
        full = gen_two_moons(int(block["n"]), float(block.get("noise_sd", 0.0)), seed)
        train_set, test_set = train_test_split(full, test_fraction, seed)
    elif gen == "blobs":
        full = gen_blobs(int(block["n"]), block["centers"], float(block.get("spread", 1.0)), seed)
        train_set, test_set = train_test_split(full, test_fraction, seed)
    else:
        subset = block.get("subset")
        train_set = load_idx_dataset(block["train_images"], block["train_labels"], subset, "idx-train")
        if "test_images" in block:
            test_set = load_idx_dataset(block["test_images"], block["test_labels"], subset, "idx-test")
            k = max(train_set.num_classes, test_set.num_classes)
            train_set = Dataset(train_set.inputs, train_set.labels, k, train_set.name)
            test_set = Dataset(test_set.inputs, test_set.labels, k, test_set.name)
        else:
            train_set, test_set = train_test_split(train_set, test_fraction, seed)
    if block.get("standardize", True):
        train_set, test_set = standardize(train_set, test_set)
    return train_set, test_set


def spectrum(model: MlpSpec, params, ds: Dataset, scope: str, tol: float,
             max_iter: int = 100_000) -> SpectrumResult:
    batch = (ds.inputs, ds.labels)
    if scope == "last_layer":
        return last_layer_lambda_max(model, params, batch, tol, max_iter)
    return full_lambda_max(model, params, batch, tol, min(max_iter, 1000))


def run_single(cfg: ExperimentConfig, run: RunSpec, train_set: Dataset,
               test_set: Dataset) -> TrainingReport:
    tc = TrainConfig.from_dict({**cfg.train, "strategy": run.strategy, "epsilon": run.epsilon,
                                "alpha": run.alpha, "global_seed": run.seed})
    report = train(tc, cfg.model, train_set, test_set)
    if cfg.analysis["hessian"]:
        res = spectrum(cfg.model, report.params, train_set, cfg.analysis["scope"],
                       cfg.analysis["tol"], cfg.analysis["max_iter"])
        report.lambda_max = res.lambda_max
        report.extra["spectrum"] = {"scope": res.scope, "lambda_max": res.lambda_max,
                                    "residual": res.residual, "iterations": res.iterations,
                                    "converged": res.converged}
    return report


def single_run_config(cfg: ExperimentConfig, run: RunSpec) -> dict:
    """Resolved config that reproduces exactly one run."""
    d = cfg.to_dict()
    d["strategies"] = [run.strategy]
    d["seeds"] = [run.seed]
    d["grid"] = {"epsilon": [run.epsilon], "alpha": [run.alpha]}
    return d


def _write_csv(path: Path, header, rows, append=False):
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(header)
        w.writerows(rows)


def run_experiment(cfg: ExperimentConfig, output_dir=None, echo=print) -> list[dict]:
    """Train every expanded run, write reports and the summary CSV, return summary rows."""
    out = Path(output_dir or os.environ.get(OUTPUT_ENV) or cfg.output_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    summary_path = out / "summary.csv"
    if summary_path.exists():
        summary_path.unlink()
    train_set, test_set = load_datasets(cfg.dataset)
    rows = []
    for run in expand_runs(cfg):
        log.info("run %s", run.name)
        start = time.perf_counter()
        report = run_single(cfg, run, train_set, test_set)
        wall = time.perf_counter() - start
        run_dir = out / "runs" / run.name
        run_dir.mkdir(exist_ok=True)
        doc = report.to_json()
        doc["experiment"] = single_run_config(cfg, run)
        (run_dir / "report.json").write_text(json.dumps(doc, indent=2))
        _write_csv(run_dir / "epochs.csv", CSV_COLUMNS, report.csv_rows())
        save_checkpoint(run_dir / "model.ckpt", cfg.model, report.params)
        if "spectrum" in report.extra:
            s = report.extra["spectrum"]
            _write_csv(run_dir / "spectrum.csv", SPECTRUM_COLUMNS,
                       [[s[c] for c in SPECTRUM_COLUMNS]])
        row = {"strategy": run.strategy, "epsilon": run.epsilon, "alpha": run.alpha,
               "seed": run.seed, "final_train_acc": report.final_train_acc,
               "final_test_acc": report.final_test_acc, "best_test_acc": report.best_test_acc,
               "lambda_max": report.lambda_max if report.lambda_max is not None else "",
               "wall_seconds": round(wall, 3)}
        _write_csv(summary_path, SUMMARY_COLUMNS, [[row[c] for c in SUMMARY_COLUMNS]], append=True)
        rows.append(row)
    if echo is not None:
        echo(format_table(rows))
    return rows


def group_rows(rows) -> dict:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["strategy"], float(r["epsilon"]), float(r["alpha"])), []).append(r)
    return groups


def select_best(rows) -> dict:
    """Per strategy, the grid point with the highest mean best test accuracy.

    Ties go to the grid point that appears first.
    """
    best: dict = {}
    for (strategy, eps, alpha), group in group_rows(rows).items():
        score = statistics.fmean(float(r["best_test_acc"]) for r in group)
        if strategy not in best or score > best[strategy][0]:
            best[strategy] = (score, eps, alpha, group)
    return {s: {"epsilon": e, "alpha": a, "mean_best_test_acc": sc, "rows": g}
            for s, (sc, e, a, g) in best.items()}


def _mean_sd(values):
    values = [float(v) for v in values if v != "" and v is not None]
    if not values:
        return "-"
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return f"{statistics.fmean(values):.4f} ± {sd:.4f}"


def format_table(rows) -> str:
    header = f"{'strategy':<9} {'eps':>6} {'alpha':>6}  {'best test acc':>18}  {'lambda_max':>18}"
    lines = [header, "-" * len(header)]
    best = select_best(rows)
    for (strategy, eps, alpha), group in group_rows(rows).items():
        mark = " *" if best[strategy]["epsilon"] == eps and best[strategy]["alpha"] == alpha else ""
        lines.append(f"{strategy:<9} {eps:>6g} {alpha:>6g}  "
                     f"{_mean_sd(r['best_test_acc'] for r in group):>18}  "
                     f"{_mean_sd(r['lambda_max'] for r in group):>18}{mark}")
    lines.append("(* = grid point selected by mean best test accuracy)")
    return "\n".join(lines)


def median_lambda(rows) -> float:
    return float(np.median([float(r["lambda_max"]) for r in rows]))
