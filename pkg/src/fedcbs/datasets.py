"""Dataset sources: synthetic Gaussian blobs and MNIST-family IDX files."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.datasets import make_blobs

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __len__(self):
        return len(self.y)

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.n_classes)


def make_synthetic(n_per_class: int, n_classes: int = 10, n_features: int = 20,
                   cluster_std: float = 1.0, center_scale: float = 1.0, seed: int = 0) -> Dataset:
    """One isotropic Gaussian blob per class, exactly ``n_per_class`` samples each.

    Centres are drawn once from a standard normal scaled by ``center_scale``
    (the ``seed`` fixes them), so train and test splits generated with the
    same seed share the same class geometry.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, n_features)) * center_scale
    X, y = make_blobs(n_samples=[n_per_class] * n_classes, centers=centers,
                      cluster_std=cluster_std, random_state=int(rng.integers(2**31 - 1)))
    return Dataset(X.astype(np.float64), y.astype(np.int64), n_classes)


def make_synthetic_split(n_train_per_class: int, n_test_per_class: int, **kwargs):
    """Train/test blobs sharing centres; test data comes from an independent stream."""
    total = make_synthetic(n_train_per_class + n_test_per_class, **kwargs)
    train_idx, test_idx = [], []
    for b in range(total.n_classes):
        members = np.flatnonzero(total.y == b)
        train_idx.extend(members[:n_train_per_class])
        test_idx.extend(members[n_train_per_class:])
    return total.subset(np.sort(train_idx)), total.subset(np.sort(test_idx))


def _open(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"IDX file not found: {path}")
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    """Images as ``(n, rows*cols)`` float64 in [0, 1]."""
    with _open(path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValueError(f"{path}: truncated IDX header")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"{path}: bad image magic 0x{magic:08x}")
        payload = fh.read(n * rows * cols)
    if len(payload) != n * rows * cols:
        raise ValueError(f"{path}: expected {n * rows * cols} pixel bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows * cols)
    return pixels.astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValueError(f"{path}: truncated IDX header")
        magic, n = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"{path}: bad label magic 0x{magic:08x}")
        payload = fh.read(n)
    if len(payload) != n:
        raise ValueError(f"{path}: expected {n} labels, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write ``(n, rows, cols)`` uint8 images (used to build fixtures)."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes(order="C"))


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_idx_dataset(images_path, labels_path, n_classes: int = 10) -> Dataset:
    X = read_idx_images(images_path)
    y = read_idx_labels(labels_path)
    if len(X) != len(y):
        raise ValueError(f"{len(X)} images but {len(y)} labels")
    return Dataset(X, y, n_classes)
