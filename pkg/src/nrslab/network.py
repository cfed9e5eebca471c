"""Multilayer perceptrons over a flat parameter vector.

Layout of the flat vector, layer by layer: weight matrix of shape
``(fan_in, fan_out)`` in row-major order, then the bias of length ``fan_out``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError(f"layer_widths must be >= 2 positive ints, got {widths}")
        if widths[-1] < 2:
            raise ValueError("need at least 2 output classes")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def num_params(self) -> int:
        w = self.layer_widths
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))

    def layer_offsets(self) -> list[tuple[int, int, int, int]]:
        """(weight_start, bias_start, fan_in, fan_out) per layer."""
        out, pos = [], 0
        for a, b in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            out.append((pos, pos + a * b, a, b))
            pos += a * b + b
        return out

    def last_layer_slice(self) -> slice:
        w0, _, a, b = self.layer_offsets()[-1]
        return slice(w0, w0 + a * b + b)


def init_params(spec: MlpSpec, seed: int) -> np.ndarray:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.num_params)
    for w0, b0, fan_in, fan_out in spec.layer_offsets():
        theta[w0:b0] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=fan_in * fan_out)
    return theta


def _activate(spec, h):
    return T.relu(h) if spec.activation == "relu" else T.tanh(h)


def hidden_features(spec: MlpSpec, params, x):
    """Input to the last layer (the penultimate activations)."""
    xv = T.value(x)
    if xv.ndim != 2 or xv.shape[1] != spec.input_dim:
        raise T.DimensionError(
            f"input of shape {xv.shape} does not match input width {spec.input_dim}")
    if T.value(params).shape != (spec.num_params,):
        raise T.DimensionError(
            f"params of shape {T.value(params).shape}, expected ({spec.num_params},)")
    h = x
    for w0, b0, a, b in spec.layer_offsets()[:-1]:
        h = T.add_bias(T.matmul(h, T.take(params, w0, (a, b))), T.take(params, b0, (b,)))
        h = _activate(spec, h)
    return h


def forward(spec: MlpSpec, params, x):
    """Logits of the MLP for a batch ``x`` of shape (B, d).

    ``params`` may be a flat array (eager evaluation) or a graph node, in which
    case the whole forward pass is recorded on that node's graph.
    """
    h = hidden_features(spec, params, x)
    w0, b0, a, b = spec.layer_offsets()[-1]
    return T.add_bias(T.matmul(h, T.take(params, w0, (a, b))), T.take(params, b0, (b,)))


def l2_norm(params) -> float:
    # scaled to avoid overflow on huge entries
    v = np.asarray(params, dtype=np.float64)
    m = np.max(np.abs(v)) if v.size else 0.0
    if m == 0.0:
        return 0.0
    return float(m * np.sqrt(np.dot(v / m, v / m)))


def unflatten(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(params[w0:b0].reshape(a, b), params[b0:b0 + b])
            for w0, b0, a, b in spec.layer_offsets()]


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"NRSCKPT\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, spec: MlpSpec, params: np.ndarray) -> None:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.num_params,):
        raise CheckpointError("params do not match spec")
    header = CHECKPOINT_MAGIC + struct.pack(
        f"<IBI{len(spec.layer_widths)}I", CHECKPOINT_VERSION,
        ACTIVATIONS.index(spec.activation), len(spec.layer_widths), *spec.layer_widths)
    Path(path).write_bytes(header + params.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[MlpSpec, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, act, n = struct.unpack_from("<IBI", data, 8)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        widths = struct.unpack_from(f"<{n}I", data, 17)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if act >= len(ACTIVATIONS):
        raise CheckpointError(f"{path}: unknown activation tag {act}")
    spec = MlpSpec(widths, ACTIVATIONS[act])
    body = data[17 + 4 * n:]
    if len(body) != 8 * spec.num_params:
        raise CheckpointError(
            f"{path}: expected {spec.num_params} params, found {len(body) / 8:g}")
    return spec, np.frombuffer(body, dtype="<f8").astype(np.float64)
