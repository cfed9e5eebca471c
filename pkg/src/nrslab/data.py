"""Datasets: synthetic generators, the IDX file format, batching."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_UBYTE = 0x08


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        if x.ndim != 2 or y.shape != (x.shape[0],) or x.shape[0] < 1:
            raise ValueError(f"inputs {x.shape} and labels {y.shape} do not line up")
        if np.isnan(x).any():
            raise ValueError("inputs contain NaN")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"labels outside [0, {self.num_classes})")

    def __len__(self):
        return self.labels.size

    def subset(self, index, name=None) -> "Dataset":
        return Dataset(self.inputs[index], self.labels[index], self.num_classes,
                       name or self.name)


def gen_two_moons(n: int, noise_sd: float, seed: int) -> Dataset:
    """Two interleaved unit half-circles, n/2 points each.

    Class 0: (cos t, sin t). Class 1: (1 - cos t, 0.5 - sin t), the mirrored moon.
    Returned in a seed-shuffled order.
    """
    if n < 2 or n % 2:
        raise ValueError(f"n must be an even number >= 2, got {n}")
    rng = np.random.default_rng(seed)
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    outer = np.column_stack([np.cos(t), np.sin(t)])
    inner = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    x = np.vstack([outer, inner])
    y = np.repeat([0, 1], half)
    if noise_sd > 0:
        x = x + rng.normal(0.0, noise_sd, size=x.shape)
    order = rng.permutation(n)
    return Dataset(x[order], y[order], 2, "two_moons")


def gen_blobs(n: int, centers, spread: float, seed: int) -> Dataset:
    """Isotropic Gaussian clusters of n/K points each; label = center index."""
    centers = np.asarray(centers, dtype=np.float64)
    k = centers.shape[0]
    if centers.ndim != 2 or k < 2:
        raise ValueError("need at least two centers")
    if n % k:
        raise ValueError(f"n={n} does not split evenly over {k} centers")
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(k), n // k)
    x = centers[y] + spread * rng.standard_normal((n, centers.shape[1]))
    order = rng.permutation(n)
    return Dataset(x[order], y[order], k, "blobs")


# -- IDX ---------------------------------------------------------------------

class IdxParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _need(data, offset, count, what):
    if len(data) < offset + count:
        raise IdxParseError(f"truncated {what}: need {count} bytes, have "
                            f"{max(len(data) - offset, 0)}", len(data))


def parse_idx(data: bytes, scale: bool = True) -> np.ndarray:
    """Decode an unsigned-byte IDX blob.

    Returns float64 values rescaled to [0, 1], or the raw integers when
    ``scale`` is false (label files).
    """
    data = memoryview(data).cast("B")
    _need(data, 0, 4, "magic")
    if data[0] != 0 or data[1] != 0:
        raise IdxParseError("bad magic: first two bytes must be zero", 0)
    if data[2] != IDX_UBYTE:
        raise IdxParseError(f"unsupported type byte 0x{data[2]:02x}", 2)
    ndim = data[3]
    if ndim == 0:
        raise IdxParseError("zero dimensions", 3)
    _need(data, 4, 4 * ndim, "dimension sizes")
    shape = struct.unpack_from(f">{ndim}I", data, 4)
    start = 4 + 4 * ndim
    size = int(np.prod(shape))
    _need(data, start, size, "payload")
    if len(data) > start + size:
        raise IdxParseError("trailing bytes after payload", start + size)
    raw = np.frombuffer(data, dtype=np.uint8, count=size, offset=start).reshape(shape)
    if scale:
        return raw / 255.0
    return raw.astype(np.int64)


def serialize_idx(array) -> bytes:
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise TypeError("serialize_idx writes unsigned bytes only")
    if a.ndim == 0 or a.ndim > 255:
        raise ValueError(f"unsupported rank {a.ndim}")
    header = bytes([0, 0, IDX_UBYTE, a.ndim]) + struct.pack(f">{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a).tobytes()


def load_idx_dataset(images_path, labels_path, limit: int | None = None,
                     name: str = "idx") -> Dataset:
    """Image/label IDX file pair as a Dataset with flattened pixel rows."""
    images = parse_idx(Path(images_path).read_bytes())
    labels = parse_idx(Path(labels_path).read_bytes(), scale=False)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(images.shape[0], -1)
    return Dataset(x, labels, int(labels.max()) + 1, name)


# -- batching ----------------------------------------------------------------

def batches(ds: Dataset, batch_size: int, epoch_seed) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seed-shuffled batches of exactly ``batch_size``; the remainder is dropped."""
    n = len(ds)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch size {batch_size} not in [1, {n}]")
    order = np.random.default_rng(epoch_seed).permutation(n)
    out = []
    for i in range(n // batch_size):
        idx = order[i * batch_size:(i + 1) * batch_size]
        out.append((ds.inputs[idx], ds.labels[idx]))
    return out


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    n = len(ds)
    n_test = int(round(n * test_fraction))
    if not 0 < n_test < n:
        raise ValueError(f"test_fraction {test_fraction} leaves an empty split")
    order = np.random.default_rng(seed).permutation(n)
    return ds.subset(order[n_test:]), ds.subset(order[:n_test])


def standardize(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Per-feature zero mean / unit variance using train statistics only."""
    mu = train.inputs.mean(axis=0)
    sd = train.inputs.std(axis=0)
    sd[sd == 0] = 1.0
    return [Dataset((d.inputs - mu) / sd, d.labels, d.num_classes, d.name)
            for d in (train, *others)]
