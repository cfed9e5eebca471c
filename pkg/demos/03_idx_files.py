"""Write and read MNIST-style IDX files.

The parser reports the byte offset of the first problem it finds, which
makes broken downloads easy to diagnose.

Run with:  python3 demos/03_idx_files.py
"""
# %% Build a tiny image/label pair and write it to disk
import tempfile
from pathlib import Path

import numpy as np

from nrslab.data import IdxParseError, load_idx_dataset, parse_idx, serialize_idx

rng = np.random.default_rng(0)
images = rng.integers(0, 256, (100, 28, 28), dtype=np.uint8)
labels = rng.integers(0, 10, 100).astype(np.uint8)

folder = Path(tempfile.mkdtemp())
(folder / "images.idx").write_bytes(serialize_idx(images))
(folder / "labels.idx").write_bytes(serialize_idx(labels))

# %% Load it back as a flat, scaled dataset
ds = load_idx_dataset(folder / "images.idx", folder / "labels.idx", limit=50)
print(ds.inputs.shape, ds.inputs.min(), ds.inputs.max(), ds.num_classes)

# %% Header layout: magic 00 00 08 <ndim>, then one big-endian u32 per dimension
raw = serialize_idx(images[:1, :2, :2])
print(raw[:16].hex(" "), "|", raw[16:].hex(" "))
print(parse_idx(raw, scale=False)[0])

# %% A truncated file
try:
    parse_idx(raw[:-1])
except IdxParseError as err:
    print(err)
