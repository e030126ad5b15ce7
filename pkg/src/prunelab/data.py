"""Datasets: CIFAR-10 binary loader, synthetic generators, splits and batching."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from prunelab.errors import ConfigurationError, DataError, ParseError
from prunelab.nn.checkpoint import read_tensors, write_tensors
from prunelab.rng import substream

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"
SYNTHETIC_KINDS = ("two-spirals", "gaussian-blobs", "tiny-images")
DATA_DIR_ENV = "PRUNELAB_DATA_DIR"


@dataclass
class Dataset:
    """Samples plus labels.

    Image datasets keep raw ``uint8`` pixels shaped (N, C, H, W) and carry
    per-channel mean/std of the 0-1 scaled pixels; feature datasets keep
    ``float32`` rows and no normalization stats.
    """

    x: np.ndarray
    y: np.ndarray
    name: str
    num_classes: int
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise DataError(f"{self.name}: {len(self.x)} samples but {len(self.y)} labels")
        self.y = np.asarray(self.y, dtype=np.uint16)
        if self.y.size and int(self.y.max()) >= self.num_classes:
            raise DataError(f"{self.name}: label {int(self.y.max())} >= class count {self.num_classes}")

    def __len__(self):
        return len(self.y)

    @property
    def is_image(self) -> bool:
        return self.x.ndim == 4

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.x.shape[1:])

    def subset(self, idx, name: str | None = None) -> "Dataset":
        return replace(self, x=self.x[idx], y=self.y[idx], name=name or self.name)

    def normalize(self, x=None, dtype=np.float32) -> np.ndarray:
        x = self.x if x is None else x
        if self.mean is None:
            return np.asarray(x, dtype=dtype)
        shape = (1, -1, 1, 1)
        return ((x.astype(dtype) / 255 - self.mean.reshape(shape).astype(dtype)) / self.std.reshape(shape).astype(dtype)).astype(dtype)

    def denormalize(self, z) -> np.ndarray:
        if self.mean is None:
            return z
        shape = (1, -1, 1, 1)
        return (z * self.std.reshape(shape) + self.mean.reshape(shape)) * 255


def channel_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    f = x.astype(np.float64) / 255
    return f.mean(axis=(0, 2, 3)), f.std(axis=(0, 2, 3))


def parse_cifar_records(buf: bytes, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    """Parse CIFAR-10 binary records: 1 label byte then 3072 pixel bytes (R, G, B planes)."""
    if len(buf) % CIFAR_RECORD:
        whole = len(buf) // CIFAR_RECORD
        raise ParseError(
            f"{source}: size {len(buf)} is not a multiple of {CIFAR_RECORD}; "
            f"partial record starts at byte offset {whole * CIFAR_RECORD}"
        )
    arr = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = arr[:, 0].astype(np.uint16)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise ParseError(f"{source}: label {labels[bad]} out of range at byte offset {bad * CIFAR_RECORD}")
    images = arr[:, 1:].reshape(-1, 3, 32, 32).copy()
    return images, labels


def _cifar_root(directory) -> Path:
    d = Path(directory)
    nested = d / "cifar-10-batches-bin"
    return nested if nested.is_dir() else d


def load_cifar10(directory=None, expected=(50_000, 10_000)) -> tuple[Dataset, Dataset]:
    """Load (train, test) from the five train batches and the test batch.

    ``directory`` defaults to ``$PRUNELAB_DATA_DIR``. Both splits are
    normalized with the training-set channel statistics.
    """
    directory = directory or os.environ.get(DATA_DIR_ENV)
    if not directory:
        raise DataError(f"no CIFAR-10 directory given and {DATA_DIR_ENV} is unset")
    root = _cifar_root(directory)
    parts = []
    for fname in (*CIFAR_TRAIN_FILES, CIFAR_TEST_FILE):
        path = root / fname
        if not path.exists():
            raise DataError(f"missing CIFAR-10 file {path}")
        parts.append(parse_cifar_records(path.read_bytes(), str(path)))
    xtr = np.concatenate([p[0] for p in parts[:5]])
    ytr = np.concatenate([p[1] for p in parts[:5]])
    xte, yte = parts[5]
    if expected is not None and (len(ytr), len(yte)) != tuple(expected):
        raise ParseError(f"{root}: got {len(ytr)}/{len(yte)} records, expected {expected[0]}/{expected[1]}")
    mean, std = channel_stats(xtr)
    return Dataset(xtr, ytr, "cifar10-train", 10, mean, std), Dataset(xte, yte, "cifar10-test", 10, mean, std)


def split(dataset: Dataset, train_frac: float = 0.9, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive, seed-determined (train, val) split."""
    if not 0 < train_frac < 1:
        raise ConfigurationError(f"train_frac must lie in (0, 1), got {train_frac}")
    n = len(dataset)
    perm = substream(seed, "split").permutation(n)
    k = int(round(train_frac * n))
    return dataset.subset(np.sort(perm[:k]), f"{dataset.name}-train"), dataset.subset(np.sort(perm[k:]), f"{dataset.name}-val")


def _two_spirals(n, rng, noise=0.02, turns=1.75):
    labels = np.arange(n) % 2
    t = np.sqrt(rng.uniform(0.02, 1.0, n)) * turns * 2 * np.pi
    r = t / (turns * 2 * np.pi)
    angle = t + np.pi * labels
    x = np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1) + rng.normal(0, noise, (n, 2))
    return x.astype(np.float32), labels


def _blobs(n, rng, classes=3, dim=2, sigma=1.0, spread=5.0):
    centers = rng.normal(0, spread, (classes, dim))
    labels = np.arange(n) % classes
    x = centers[labels] + rng.normal(0, 1, (n, dim)) * sigma
    return x.astype(np.float32), labels


def _tiny_images(n, rng, classes=10, size=8, channels=3, noise=110.0):
    # class prototypes: smooth random fields; samples add a random shift and pixel noise
    base = rng.normal(0, 1, (classes, channels, size // 2, size // 2))
    protos = base.repeat(2, axis=2).repeat(2, axis=3)
    labels = np.arange(n) % classes
    shifts = rng.integers(-1, 2, (n, 2))
    imgs = np.empty((n, channels, size, size))
    for i in range(n):
        imgs[i] = np.roll(protos[labels[i]], tuple(shifts[i]), axis=(1, 2))
    imgs = 128 + 45 * imgs + rng.normal(0, noise, imgs.shape)
    return np.clip(np.rint(imgs), 0, 255).astype(np.uint8), labels


def make_synthetic(kind: str, n: int, seed: int = 0, **kwargs) -> Dataset:
    """Deterministic desk-scale datasets.

    ``two-spirals`` (2 classes, 2-d), ``gaussian-blobs`` (``classes``,
    ``dim``, ``sigma``), ``tiny-images`` (``classes`` x 3 x ``size`` x
    ``size`` uint8 images, default 10 classes at 8x8).
    """
    if n <= 0:
        raise ConfigurationError(f"n must be positive, got {n}")
    rng = substream(seed, f"synthetic:{kind}")
    if kind == "two-spirals":
        x, y = _two_spirals(n, rng, **kwargs)
        return Dataset(x, y, kind, 2)
    if kind == "gaussian-blobs":
        x, y = _blobs(n, rng, **kwargs)
        return Dataset(x, y, kind, kwargs.get("classes", 3))
    if kind == "tiny-images":
        x, y = _tiny_images(n, rng, **kwargs)
        mean, std = channel_stats(x)
        return Dataset(x, y, kind, kwargs.get("classes", 10), mean, std)
    raise ConfigurationError(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")


def save_dataset(dataset: Dataset, path):
    """Cache a dataset in the checkpoint tensor format."""
    tensors = {"x": dataset.x, "y": dataset.y.astype(np.uint8), "num_classes": np.array([dataset.num_classes], dtype=np.float64)}
    if dataset.num_classes > 256:
        tensors["y"] = dataset.y.astype(np.float64)
    if dataset.mean is not None:
        tensors["mean"] = dataset.mean.astype(np.float64)
        tensors["std"] = dataset.std.astype(np.float64)
    write_tensors(path, tensors)


def load_dataset(path, name: str | None = None) -> Dataset:
    """Inverse of :func:`save_dataset`."""
    t = read_tensors(path)
    missing = {"x", "y", "num_classes"} - set(t)
    if missing:
        raise ParseError(f"{path}: missing tensors {sorted(missing)}")
    return Dataset(t["x"], t["y"].astype(np.uint16), name or Path(path).stem, int(t["num_classes"][0]), t.get("mean"), t.get("std"))


def num_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def random_crop_flip(x: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Zero-pad by ``pad``, take a random same-size crop, flip horizontally with p=0.5."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (h, w), axis=(2, 3))
    oy = rng.integers(0, 2 * pad + 1, n)
    ox = rng.integers(0, 2 * pad + 1, n)
    out = win[np.arange(n), :, oy, ox]
    flip = rng.random(n) < 0.5
    out[flip] = out[flip][..., ::-1]
    return np.ascontiguousarray(out)


def batches(dataset: Dataset, batch_size: int, seed: int = 0, epoch: int = 0, augment: bool = False, shuffle: bool = True, dtype=np.float32):
    """Yield normalized ``(x, y)`` batches covering every record exactly once.

    Order depends only on ``(seed, epoch)``; the last partial batch is kept.
    Augmentation (pad-4 crop + flip) applies to image data only.
    """
    n = len(dataset)
    order = substream(seed, "data-order", epoch).permutation(n) if shuffle else np.arange(n)
    aug_rng = substream(seed, "augment", epoch) if augment and dataset.is_image else None
    for i in range(0, n, batch_size):
        idx = order[i : i + batch_size]
        xb = dataset.x[idx]
        if aug_rng is not None:
            xb = random_crop_flip(xb, aug_rng)
        yield dataset.normalize(xb, dtype), dataset.y[idx].astype(np.int64)
