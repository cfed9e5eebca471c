"""Simulated data-parallel SGD for the baseline, RPR and NRS strategies."""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import Dataset, batches
from .network import MlpSpec, forward, init_params
from .objective import STRATEGIES, LossBreakdown, accuracy, strategy_loss
from .perturb import SCALE_MODES, perturbation_for


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"training failed at step {step}: {cause}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "baseline"
    epsilon: float = 0.0
    alpha: float = 0.0
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    num_workers: int = 1
    epochs: int = 1
    total_steps: int | None = None
    label_smoothing: float = 0.0
    global_seed: int = 0
    scale_mode: str = "divide"
    ball_interior: bool = False
    parallel: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        # each strategy only owns some of the hyperparameters
        if self.strategy == "baseline":
            object.__setattr__(self, "epsilon", 0.0)
            object.__setattr__(self, "alpha", 0.0)
        elif self.strategy == "rpr":
            object.__setattr__(self, "alpha", 0.0)
        for name in ("epsilon", "alpha", "base_lr", "momentum", "weight_decay",
                     "label_smoothing"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.epsilon < 0 or self.alpha < 0 or self.weight_decay < 0:
            raise ConfigError("epsilon, alpha and weight_decay must be >= 0")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        if self.batch_size < 1 or self.num_workers < 1:
            raise ConfigError("batch_size and num_workers must be >= 1")
        if self.batch_size % self.num_workers:
            raise ConfigError(f"batch_size {self.batch_size} is not divisible by "
                              f"num_workers {self.num_workers}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.total_steps is not None and self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.scale_mode not in SCALE_MODES:
            raise ConfigError(f"scale_mode must be one of {SCALE_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown train config key {unknown[0]!r}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EpochRecord:
    epoch: int
    step: int
    lr: float
    loss_total: float
    loss_empirical: float
    loss_divergence: float
    loss_neighbor: float
    train_acc: float
    test_acc: float


CSV_COLUMNS = [f.name for f in fields(EpochRecord)]


@dataclass
class TrainingReport:
    config: TrainConfig
    model: MlpSpec
    records: list[EpochRecord]
    params: np.ndarray
    lambda_max: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def final_train_acc(self) -> float:
        return self.records[-1].train_acc

    @property
    def final_test_acc(self) -> float:
        return self.records[-1].test_acc

    @property
    def best_test_acc(self) -> float:
        return max(r.test_acc for r in self.records)

    def to_json(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "config_digest": self.config.digest(),
            "model": {"layer_widths": list(self.model.layer_widths),
                      "activation": self.model.activation},
            "records": [asdict(r) for r in self.records],
            "final_train_acc": self.final_train_acc,
            "final_test_acc": self.final_test_acc,
            "best_test_acc": self.best_test_acc,
            "lambda_max": self.lambda_max,
            **self.extra,
        }

    def csv_rows(self) -> list[list]:
        return [[getattr(r, c) for c in CSV_COLUMNS] for r in self.records]


# -- building blocks ---------------------------------------------------------

def shard_batch(batch, num_shards: int):
    """Split (x, y) into ``num_shards`` contiguous equal pieces, in order."""
    x, y = batch
    n = len(y)
    if num_shards < 1 or n % num_shards:
        raise ConfigError(f"batch of {n} cannot be split into {num_shards} equal shards")
    size = n // num_shards
    return [(x[i * size:(i + 1) * size], y[i * size:(i + 1) * size])
            for i in range(num_shards)]


def reduce_gradients(grads) -> np.ndarray:
    """Mean of worker gradients, summed in worker-id order."""
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if not grads:
        raise ValueError("no gradients to reduce")
    shape = grads[0].shape
    total = np.zeros(shape)
    for i, g in enumerate(grads):
        if g.shape != shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, expected {shape}")
        total += g
    return total / len(grads)


def cosine_lr(base: float, step: int, total: int) -> float:
    if not 0 <= step < total:
        raise ValueError(f"step {step} outside [0, {total})")
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total))


def sgd_step(params, grad, velocity, lr: float, momentum: float, weight_decay: float):
    """Heavy-ball SGD with L2 weight decay folded into the gradient."""
    g = grad + weight_decay * params if weight_decay else grad
    v = momentum * velocity + g
    return params - lr * v, v


# -- training loop -----------------------------------------------------------

def _derived_seed(*key) -> int:
    return int(np.random.SeedSequence([int(k) & (2**64 - 1) for k in key]).generate_state(1)[0])


def _worker_gradient(model, cfg, theta, shard, step, worker_id):
    if cfg.strategy == "baseline":
        delta = None
    else:
        delta = perturbation_for(theta, cfg.epsilon, cfg.global_seed, step, worker_id,
                                 cfg.scale_mode, cfg.ball_interior)
    return strategy_loss(model, theta, delta, shard, cfg.strategy, cfg.alpha,
                         cfg.label_smoothing)


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    n = len(parts)
    return LossBreakdown(*(sum(getattr(p, f) for p in parts) / n
                           for f in ("empirical", "divergence", "neighbor_empirical",
                                     "total", "alpha")))


def evaluate(model: MlpSpec, params, ds: Dataset) -> float:
    return accuracy(forward(model, params, ds.inputs), ds.labels)


def train(config: TrainConfig, model: MlpSpec, train_set: Dataset,
          test_set: Dataset | None = None, init: np.ndarray | None = None) -> TrainingReport:
    """Run the configured strategy and return per-epoch records plus final weights."""
    cfg = config
    if train_set.inputs.shape[1] != model.input_dim:
        raise ConfigError(f"dataset has {train_set.inputs.shape[1]} features, "
                          f"model expects {model.input_dim}")
    if train_set.num_classes > model.num_classes:
        raise ConfigError("model has fewer outputs than dataset classes")
    steps_per_epoch = len(train_set) // cfg.batch_size
    if steps_per_epoch == 0:
        raise ConfigError("batch_size larger than training set")
    total = cfg.total_steps or cfg.epochs * steps_per_epoch
    n_epochs = math.ceil(total / steps_per_epoch)

    theta = init_params(model, _derived_seed(cfg.global_seed, 0)) if init is None \
        else np.array(init, dtype=np.float64)
    velocity = np.zeros_like(theta)
    pool = ThreadPoolExecutor(cfg.num_workers) if cfg.parallel and cfg.num_workers > 1 else None
    records: list[EpochRecord] = []
    step = 0
    try:
        for epoch in range(n_epochs):
            epoch_parts = []
            for batch in batches(train_set, cfg.batch_size, _derived_seed(cfg.global_seed, 1, epoch)):
                if step >= total:
                    break
                lr = cosine_lr(cfg.base_lr, step, total)
                shards = shard_batch(batch, cfg.num_workers)
                try:
                    jobs = [(model, cfg, theta, s, step, w) for w, s in enumerate(shards)]
                    if pool is not None:
                        results = list(pool.map(lambda a: _worker_gradient(*a), jobs))
                    else:
                        results = [_worker_gradient(*a) for a in jobs]
                    grad = reduce_gradients([g for _, g in results])
                    if not np.all(np.isfinite(grad)):
                        raise FloatingPointError("non-finite gradient")
                except Exception as exc:
                    raise TrainingError(step, exc) from exc
                theta, velocity = sgd_step(theta, grad, velocity, lr, cfg.momentum,
                                           cfg.weight_decay)
                epoch_parts.append((_mean_breakdown([b for b, _ in results]), lr))
                step += 1
            mean = _mean_breakdown([b for b, _ in epoch_parts])
            records.append(EpochRecord(
                epoch=epoch, step=step, lr=epoch_parts[-1][1],
                loss_total=mean.total, loss_empirical=mean.empirical,
                loss_divergence=mean.divergence, loss_neighbor=mean.neighbor_empirical,
                train_acc=evaluate(model, theta, train_set),
                test_acc=evaluate(model, theta, test_set) if test_set is not None else float("nan"),
            ))
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainingReport(cfg, model, records, theta)
