"""Per-worker random weight perturbations.

Every worker draws from a Philox (counter-based) generator whose key is
derived from ``(global_seed, step, worker_id)``, so the perturbation a worker
uses never depends on how the workers are scheduled.
"""
from __future__ import annotations

import numpy as np

from .network import l2_norm
from .tensor import NumericError

RngStream = np.random.Generator

SCALE_MODES = ("divide", "multiply", "none")


class PerturbationError(ValueError):
    pass


def worker_rng(global_seed: int, step: int, worker_id: int) -> RngStream:
    """Generator keyed by (global_seed, step, worker_id)."""
    if worker_id < 0 or step < 0:
        raise PerturbationError("step and worker_id must be non-negative")
    key = np.random.SeedSequence([int(global_seed) & (2**64 - 1), step, worker_id])
    return np.random.Generator(np.random.Philox(key=key.generate_state(2, np.uint64)))


def sample_perturbation(dim: int, epsilon: float, rng: RngStream,
                        ball_interior: bool = False) -> np.ndarray:
    """A vector of norm exactly ``epsilon`` with uniformly random direction.

    With ``ball_interior`` the radius is ``epsilon * u**(1/dim)`` instead,
    which makes the draw uniform over the whole ball.
    """
    if dim < 1:
        raise PerturbationError(f"dim must be >= 1, got {dim}")
    if epsilon < 0:
        raise PerturbationError(f"epsilon must be >= 0, got {epsilon}")
    if epsilon == 0:
        return np.zeros(dim)
    direction = rng.standard_normal(dim)
    norm = l2_norm(direction)
    while norm == 0.0:
        direction = rng.standard_normal(dim)
        norm = l2_norm(direction)
    radius = epsilon
    if ball_interior:
        radius = epsilon * rng.random() ** (1.0 / dim)
    return direction * (radius / norm)


def normalize_perturbation(delta, theta, scale_mode: str = "divide") -> np.ndarray:
    """Rescale ``delta`` by the weight norm: divide (default), multiply or leave it."""
    delta = np.asarray(delta, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if delta.shape != theta.shape:
        raise PerturbationError(
            f"delta shape {delta.shape} does not match theta shape {theta.shape}")
    if scale_mode not in SCALE_MODES:
        raise PerturbationError(f"unknown scale_mode {scale_mode!r}")
    if scale_mode == "none":
        return delta.copy()
    norm = l2_norm(theta)
    if scale_mode == "multiply":
        return delta * norm
    if norm == 0.0 or not np.isfinite(norm):
        raise NumericError(f"cannot normalize by weight norm {norm}")
    return delta / norm


def perturbation_for(theta, epsilon: float, global_seed: int, step: int, worker_id: int,
                     scale_mode: str = "divide", ball_interior: bool = False) -> np.ndarray:
    """Sample-and-normalize pipeline used by one worker at one step."""
    rng = worker_rng(global_seed, step, worker_id)
    delta = sample_perturbation(np.size(theta), epsilon, rng, ball_interior)
    return normalize_perturbation(delta, theta, scale_mode)
