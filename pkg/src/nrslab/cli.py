"""Command line entry point.

    nrslab run CONFIG.json
    nrslab analyze CHECKPOINT --data DATASET --scope {last_layer,full} --tol TOL

Exit codes: 0 success, 1 config error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .experiment import (OUTPUT_ENV, SCOPES, ExperimentConfig, DATASET_KEYS, _reject_unknown,
                         _write_csv, load_datasets, run_experiment, spectrum)
from .hessian import SPECTRUM_COLUMNS
from .network import CheckpointError, load_checkpoint
from .trainer import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _dataset_block(text: str) -> dict:
    """Dataset block given inline as JSON or as a path to a JSON file."""
    path = Path(text)
    try:
        block = json.loads(path.read_text() if path.is_file() else text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--data is neither a JSON file nor inline JSON: {exc}") from exc
    if isinstance(block, dict) and "dataset" in block:
        block = block["dataset"]
    gen = block.get("generator") if isinstance(block, dict) else None
    if gen not in DATASET_KEYS:
        raise ConfigError(f"dataset.generator must be one of {sorted(DATASET_KEYS)}")
    _reject_unknown(block, DATASET_KEYS[gen], "dataset")
    return block


def cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_experiment(cfg, args.output_dir)
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        block = _dataset_block(args.data)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        model, params = load_checkpoint(args.checkpoint)
        train_set, _ = load_datasets(block)
        if train_set.inputs.shape[1] != model.input_dim or train_set.num_classes > model.num_classes:
            raise CheckpointError(
                f"checkpoint expects {model.input_dim} features / {model.num_classes} classes, "
                f"data has {train_set.inputs.shape[1]} / {train_set.num_classes}")
        res = spectrum(model, params, train_set, args.scope, args.tol)
    except Exception as exc:
        print(f"load/analysis error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"scope={res.scope} lambda_max={res.lambda_max:.10g} "
          f"residual={res.residual:.3g} iterations={res.iterations}")
    out = Path(args.output_dir or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "analysis.csv", SPECTRUM_COLUMNS, [res.csv_row()], append=True)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrslab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train every strategy/grid point/seed in a config")
    p.add_argument("config")
    p.add_argument("--output-dir", default=None,
                   help=f"overrides config output_dir and ${OUTPUT_ENV}")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="largest Hessian eigenvalue of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--data", required=True, help="dataset block: JSON file or inline JSON")
    p.add_argument("--scope", choices=SCOPES, default="last_layer")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
