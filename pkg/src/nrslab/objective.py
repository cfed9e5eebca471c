"""Empirical loss, model divergence and the neighborhood-smoothing objective."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .network import MlpSpec, forward

# Probabilities are floored at this value inside the log-difference of the KL.
PROB_FLOOR = 1e-12
_LOG_FLOOR = float(np.log(PROB_FLOOR))

STRATEGIES = ("baseline", "rpr", "nrs")


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class LossBreakdown:
    """Values of the three loss terms.

    A term that is not part of the optimized objective (e.g. the clean
    empirical loss under RPR) is recorded as 0.0, so that
    ``total == empirical + alpha * divergence + neighbor_empirical`` always holds.
    """

    empirical: float
    divergence: float
    neighbor_empirical: float
    total: float
    alpha: float

    def as_dict(self) -> dict:
        return asdict(self)


def _check_labels(labels, n_rows, k):
    labels = np.asarray(labels)
    if labels.shape != (n_rows,):
        raise T.DimensionError(f"expected {n_rows} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise LabelError(f"label {bad} outside [0, {k})")
    return labels.astype(np.int64)


def smoothed_targets(labels, k: int, smoothing: float = 0.0) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    t = np.full((labels.size, k), smoothing / k)
    t[np.arange(labels.size), labels] += 1.0 - smoothing
    return t


def cross_entropy(logits, labels, smoothing: float = 0.0):
    """Mean over the batch of -sum_k t_k log softmax(logits)_k."""
    b, k = T.value(logits).shape
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {smoothing}")
    labels = _check_labels(labels, b, k)
    logp = T.log_softmax(logits)
    return T.scale(T.sum_all(T.mul(logp, smoothed_targets(labels, k, smoothing))), -1.0 / b)


def model_divergence(logits_p, logits_q):
    """Batch mean of KL(softmax(logits_p) || softmax(logits_q)), in nats.

    Differentiable with respect to both arguments.
    """
    pv, qv = T.value(logits_p), T.value(logits_q)
    if pv.shape != qv.shape:
        raise T.DimensionError(
            f"model_divergence: shapes {pv.shape} and {qv.shape} differ")
    logp = T.log_softmax(logits_p)
    logq = T.log_softmax(logits_q)
    gap = T.sub(T.clamp_min(logp, _LOG_FLOOR), T.clamp_min(logq, _LOG_FLOOR))
    return T.scale(T.sum_all(T.mul(T.exp(logp), gap)), 1.0 / pv.shape[0])


def accuracy(logits, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    logits = T.value(logits)
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def strategy_loss(spec: MlpSpec, params, delta, batch, strategy: str = "nrs",
                  alpha: float = 1.0, smoothing: float = 0.0):
    """Loss breakdown and gradient w.r.t. ``params`` for one training strategy.

    baseline: L(theta).
    rpr:      L(theta + delta).
    nrs:      L(theta) + alpha * KL(f(theta) || f(theta + delta)) + L(theta + delta).

    ``delta`` is a constant; it is ignored by the baseline strategy.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    x, y = batch
    params = np.asarray(params, dtype=np.float64)
    g = T.Graph()
    theta = g.param(params)
    empirical = divergence = neighbor = 0.0
    terms = []
    if strategy != "baseline":
        delta = np.asarray(delta, dtype=np.float64)
        if delta.shape != params.shape:
            raise T.DimensionError(
                f"delta of shape {delta.shape} does not match params {params.shape}")
        shifted_logits = forward(spec, T.add(theta, delta), x)
        neighbor_node = cross_entropy(shifted_logits, y, smoothing)
        neighbor = float(neighbor_node.value)
        terms.append(neighbor_node)
    if strategy != "rpr":
        logits = forward(spec, theta, x)
        emp_node = cross_entropy(logits, y, smoothing)
        empirical = float(emp_node.value)
        terms.append(emp_node)
    if strategy == "nrs":
        div_node = model_divergence(logits, shifted_logits)
        divergence = float(div_node.value)
        terms.append(T.scale(div_node, alpha))
    else:
        alpha = 0.0
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    grad = g.backward(total)[theta.id]
    breakdown = LossBreakdown(empirical, divergence, neighbor, float(total.value), float(alpha))
    return breakdown, grad


def nrs_loss(spec: MlpSpec, params, delta, batch, alpha: float,
             smoothing: float = 0.0) -> tuple[LossBreakdown, np.ndarray]:
    """Three-term neighborhood-smoothing loss and its gradient w.r.t. ``params``."""
    return strategy_loss(spec, params, delta, batch, "nrs", alpha, smoothing)
