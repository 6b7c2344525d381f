"""Datasets: IDX-format image/label files and deterministic synthetic generators.

All feature vectors are f32 in [0, 1].  Synthetic generators are seeded with
numpy's PCG64 (`np.random.default_rng`) and draw train/test splits from
disjoint streams, so the same seed always reproduces the same arrays and the
splits never share samples.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_SPLIT_STREAM = {"train": 1, "test": 2}


@dataclass
class Dataset:
    x: np.ndarray  # (n, dim) f32 in [0, 1]
    y: np.ndarray  # (n,) int64 class indices
    num_classes: int
    split: str

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"bad dataset shapes x{self.x.shape} y{self.y.shape}")
        if not np.isfinite(self.x).all():
            raise ValueError("features contain non-finite values")
        if self.x.size and (self.x.min() < 0.0 or self.x.max() > 1.0):
            raise ValueError("features must be normalized to [0, 1]")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError("labels out of range")
        if self.split not in _SPLIT_STREAM:
            raise ValueError(f"split must be train or test, got {self.split!r}")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    def truncated(self, limit: int | None) -> "Dataset":
        if limit is None or limit >= len(self):
            return self
        if limit < 1:
            raise ValueError("limit must be >= 1")
        return Dataset(self.x[:limit], self.y[:limit], self.num_classes, self.split)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_classes), dtype=np.float32)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# --------------------------------------------------------------------------
# IDX binary format (big-endian 32-bit header fields)
# --------------------------------------------------------------------------


def _read_idx_header(f, path, expected_magic, n_dims):
    head = f.read(4 * (1 + n_dims))
    if len(head) < 4 * (1 + n_dims):
        raise ValueError(f"{path}: truncated IDX header")
    fields = struct.unpack(f">{1 + n_dims}I", head)
    if fields[0] != expected_magic:
        raise ValueError(
            f"{path}: bad IDX magic 0x{fields[0]:08x}, expected 0x{expected_magic:08x}"
        )
    return fields[1:]


def load_idx_images(path) -> np.ndarray:
    """Raw (n, rows, cols) uint8 pixels from an IDX image file."""
    with open(path, "rb") as f:
        n, rows, cols = _read_idx_header(f, path, IDX_IMAGES_MAGIC, 3)
        buf = f.read(n * rows * cols)
    if len(buf) != n * rows * cols:
        raise ValueError(f"{path}: expected {n * rows * cols} pixel bytes, got {len(buf)}")
    return np.frombuffer(buf, dtype=np.uint8).reshape(n, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        (n,) = _read_idx_header(f, path, IDX_LABELS_MAGIC, 1)
        buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"{path}: expected {n} label bytes, got {len(buf)}")
    return np.frombuffer(buf, dtype=np.uint8)


def write_idx_images(path, images: np.ndarray) -> None:
    """Serialize (n, rows, cols) uint8 pixels back to IDX bytes."""
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


def load_mnist_idx(images_path, labels_path, limit: int | None = None,
                   split: str = "train") -> Dataset:
    """Load an IDX image/label pair, scale pixels to [0, 1], optionally truncate."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    n = images.shape[0] if limit is None else min(images.shape[0], limit)
    x = images[:n].reshape(n, -1).astype(np.float32) / np.float32(255.0)
    y = labels[:n].astype(np.int64)
    return Dataset(x=x, y=y, num_classes=10, split=split)


# --------------------------------------------------------------------------
# synthetic generators
# --------------------------------------------------------------------------


def _clip01(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    # Fixed affine map so train/test share one normalization.
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0).astype(np.float32)


def synth_blobs(n: int, classes: int, seed: int, split: str = "train") -> Dataset:
    """Well-separated 2-D Gaussian blobs, one per class, ~10 sigma apart."""
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if n < classes:
        raise ValueError("need at least one sample per class")
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers = 10.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    rng = np.random.default_rng([seed, _SPLIT_STREAM[split], 11])
    y = np.arange(n, dtype=np.int64) % classes
    x = centers[y] + rng.normal(0.0, 1.0, size=(n, 2))
    return Dataset(x=_clip01(x, -15.0, 15.0), y=y, num_classes=classes, split=split)


def synth_anomaly(n: int, seed: int, split: str = "train") -> Dataset:
    """Two-class 64-dim anomaly stand-in: a base Gaussian vs a shifted, wider one.

    The shift magnitude (3 sigma along a seed-fixed direction, with the
    anomalous class scaled 1.5x) was chosen so a logistic-regression oracle
    reaches >= 0.9 held-out accuracy.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    dim = 64
    proto_rng = np.random.default_rng([seed, 0, 17])
    direction = proto_rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    shift = 3.0 * direction
    rng = np.random.default_rng([seed, _SPLIT_STREAM[split], 17])
    y = np.arange(n, dtype=np.int64) % 2
    base = rng.normal(0.0, 1.0, size=(n, dim))
    x = np.where(y[:, None] == 1, 1.5 * base + shift, base)
    return Dataset(x=_clip01(x, -8.0, 8.0), y=y, num_classes=2, split=split)


def synth_images(n: int, seed: int, split: str = "train",
                 side: int = 28, classes: int = 10) -> Dataset:
    """Image-classification stand-in: 28x28 smooth class prototypes with
    per-class mode mixtures, smooth deformations, and pixel noise.

    Hard enough that a few epochs of dense training are needed for high
    accuracy, which keeps crippled (heavily sparsified) training visibly
    behind; prototypes are shared across splits, sample noise is not.
    """
    if n < classes:
        raise ValueError("need at least one sample per class")
    modes = 3

    def smooth_field(g, shape, sigma):
        # unit-variance smooth field: plain smoothing would shrink the
        # amplitude ~10x and leave no contrast after the [0,1] mapping
        f = gaussian_filter(g.normal(size=shape), sigma=sigma)
        return f / f.std()

    proto_rng = np.random.default_rng([seed, 0, 23])
    protos = np.empty((classes, modes, side, side))
    for c in range(classes):
        base = smooth_field(proto_rng, (side, side), 3.0)
        for m in range(modes):
            variant = smooth_field(proto_rng, (side, side), 3.0)
            protos[c, m] = 0.75 * base + 0.6 * variant
    rng = np.random.default_rng([seed, _SPLIT_STREAM[split], 23])
    y = rng.permutation(np.arange(n, dtype=np.int64) % classes)
    mode = rng.integers(0, modes, size=n)
    gain = rng.uniform(0.7, 1.3, size=n)
    deform = smooth_field(rng, (n, side, side), (0, 2.0, 2.0))
    noise = rng.normal(0.0, 1.0, size=(n, side, side))
    imgs = gain[:, None, None] * protos[y, mode] + 1.4 * deform + noise
    x = _clip01(imgs.reshape(n, side * side), -6.0, 6.0)
    return Dataset(x=x, y=y, num_classes=classes, split=split)
