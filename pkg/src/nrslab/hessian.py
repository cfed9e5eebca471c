"""Curvature analysis: Hessian-vector products, power iteration, last-layer block."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .network import MlpSpec, forward, hidden_features, l2_norm
from .objective import cross_entropy

DEFAULT_H = 1e-4
MAX_BLOCK_DIM = 5000


class ScopeError(ValueError):
    pass


@dataclass(frozen=True)
class SpectrumResult:
    lambda_max: float
    iterations: int
    residual: float
    scope: str = "full_model"
    converged: bool = True

    def csv_row(self) -> list:
        return [self.scope, self.lambda_max, self.residual, self.iterations]


SPECTRUM_COLUMNS = ["scope", "lambda_max", "residual", "iterations"]


def loss_gradient(spec: MlpSpec, batch, smoothing: float = 0.0) -> Callable:
    """theta -> gradient of the mean cross-entropy on ``batch``."""
    x, y = batch

    def grad(theta):
        g = T.Graph()
        node = g.param(theta)
        loss = cross_entropy(forward(spec, node, x), y, smoothing)
        return g.backward(loss)[node.id]

    return grad


def hvp(grad_fn: Callable, params, v, h: float = DEFAULT_H) -> np.ndarray:
    """H v by central differences of the gradient along v/|v|."""
    params = np.asarray(params, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    norm = l2_norm(v)
    if norm == 0:
        raise ValueError("hvp needs a nonzero direction")
    u = v / norm
    diff = np.asarray(grad_fn(params + h * u)) - np.asarray(grad_fn(params - h * u))
    if not np.all(np.isfinite(diff)):
        raise T.NumericError("non-finite gradient inside hvp")
    return diff * (norm / (2.0 * h))


def _power(matvec, v, tol, max_iter, shift):
    lam = None
    hv = matvec(v) - shift * v
    for it in range(1, max_iter + 1):
        new = float(v @ hv)
        norm = l2_norm(hv)
        if norm == 0.0:
            return 0.0, v, it, True
        v = hv / norm
        hv = matvec(v) - shift * v
        if lam is not None and abs(new - lam) <= tol * max(abs(new), 1e-300):
            return float(v @ hv), v, it, True
        lam = new
    return float(v @ hv), v, max_iter, False


def lambda_max(matvec: Callable, dim: int, tol: float = 1e-8, max_iter: int = 10_000,
               seed: int = 0, scope: str = "full_model") -> SpectrumResult:
    """Largest (algebraic) eigenvalue of a symmetric operator by power iteration.

    Plain power iteration finds the eigenvalue of largest magnitude; if that one
    is negative, a second pass on ``A - lambda I`` recovers the top of the spectrum.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    v = np.random.default_rng(seed).standard_normal(dim)
    v /= l2_norm(v)
    lam, vec, iters, ok = _power(matvec, v, tol, max_iter, 0.0)
    if lam == 0.0 and l2_norm(matvec(vec)) == 0.0:
        return SpectrumResult(0.0, iters, 0.0, scope, True)
    if lam < 0:
        shifted, vec, more, ok = _power(matvec, v, tol, max_iter, lam)
        lam = shifted + lam
        iters += more
    hv = matvec(vec)
    residual = l2_norm(hv - lam * vec) / l2_norm(vec)
    return SpectrumResult(float(lam), iters, float(residual), scope, ok)


def last_layer_hessian(spec: MlpSpec, params, batch, max_dim: int = MAX_BLOCK_DIM) -> np.ndarray:
    """Exact cross-entropy Hessian restricted to the last layer's weights and bias.

    Rows follow the flat parameter layout of that layer (weights row-major, then
    bias), which makes the block (1/B) sum_b [h;1][h;1]^T kron (diag p - p p^T).
    Label smoothing does not change it.
    """
    x, _ = batch
    if len(x) == 0:
        raise ValueError("empty batch")
    _, _, d_h, k = spec.layer_offsets()[-1]
    dim = (d_h + 1) * k
    if dim > max_dim:
        raise ScopeError(f"last-layer block has dimension {dim} > {max_dim}; "
                         "use hvp-based analysis instead")
    params = np.asarray(params, dtype=np.float64)
    h = hidden_features(spec, params, x)
    logits = forward(spec, params, x)
    p = np.exp(T.log_softmax(logits))
    ha = np.hstack([h, np.ones((len(h), 1))])
    # A_b = diag(p_b) - p_b p_b^T; H = mean_b kron(ha_b ha_b^T, A_b)
    a = np.einsum("bk,kl->bkl", p, np.eye(k)) - np.einsum("bk,bl->bkl", p, p)
    H = np.einsum("bi,bj,bkl->ikjl", ha, ha, a, optimize=True) / len(h)
    H = H.reshape(dim, dim)
    return 0.5 * (H + H.T)


def last_layer_lambda_max(spec: MlpSpec, params, batch, tol: float = 1e-10,
                          max_iter: int = 100_000, seed: int = 0) -> SpectrumResult:
    H = last_layer_hessian(spec, params, batch)
    return lambda_max(lambda v: H @ v, H.shape[0], tol, max_iter, seed, "last_layer")


def full_lambda_max(spec: MlpSpec, params, batch, tol: float = 1e-6, max_iter: int = 500,
                    seed: int = 0, h: float = DEFAULT_H, smoothing: float = 0.0) -> SpectrumResult:
    grad_fn = loss_gradient(spec, batch, smoothing)
    params = np.asarray(params, dtype=np.float64)
    return lambda_max(lambda v: hvp(grad_fn, params, v, h), params.size, tol, max_iter,
                      seed, "full_model")
