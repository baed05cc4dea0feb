"""Labeled datasets: seeded Gaussian mixtures and IDX image files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dataset:
    x: np.ndarray  # (n, features)
    y: np.ndarray  # (n,) integer labels

    def __post_init__(self):
        self.x = np.asarray(self.x)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} inputs but {len(self.y)} labels")

    def __len__(self):
        return len(self.y)

    @property
    def num_classes(self) -> int:
        return int(self.y.max()) + 1

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        """Yield (x, y) mini-batches; shuffled when ``rng`` is given."""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start : start + batch_size]
            yield self.x[idx], self.y[idx]


@dataclass
class SyntheticTaskSpec:
    num_classes: int = 8
    input_dim: int = 16
    scale: float = 1.0
    mean_radius: float = 2.0
    n_train: int = 2000
    n_test: int = 500
    seed: int = 0
    means: np.ndarray | None = field(default=None, repr=False)

    def class_means(self) -> np.ndarray:
        if self.means is not None:
            return np.asarray(self.means, dtype=np.float64)
        rng = np.random.default_rng([self.seed, 0])
        m = rng.standard_normal((self.num_classes, self.input_dim))
        return self.mean_radius * m / np.linalg.norm(m, axis=1, keepdims=True)


def make_synthetic(spec: SyntheticTaskSpec) -> tuple[Dataset, Dataset]:
    """Gaussian class clusters; returns disjoint (train, test) sets."""
    if spec.n_train <= 0 or spec.n_test <= 0:
        raise ValueError("sample counts must be positive")
    means = spec.class_means()
    if means.shape != (spec.num_classes, spec.input_dim):
        raise ValueError(f"means shape {means.shape} != ({spec.num_classes}, {spec.input_dim})")
    gaps = np.linalg.norm(means[:, None] - means[None, :], axis=-1)
    if np.any(gaps[~np.eye(spec.num_classes, dtype=bool)] == 0):
        raise ValueError("class means must be pairwise distinct")

    def draw(n, stream):
        rng = np.random.default_rng([spec.seed, stream])
        y = rng.integers(0, spec.num_classes, size=n)
        x = means[y] + spec.scale * rng.standard_normal((n, spec.input_dim))
        return Dataset(x.astype(np.float32), y)

    return draw(spec.n_train, 1), draw(spec.n_test, 2)


# ---------------------------------------------------------------------------
# IDX (MNIST-style) files

_IDX_TYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated header at byte offset {len(raw)}")
    zero, dtype_code, ndim = raw[0:2], raw[2], raw[3]
    if zero != b"\x00\x00" or dtype_code not in _IDX_TYPES:
        raise ValueError(f"{path}: bad magic {raw[:4].hex()} at byte offset 0")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise ValueError(f"{path}: truncated dimension list at byte offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = np.dtype(_IDX_TYPES[dtype_code])
    need = header_end + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) < need:
        raise ValueError(f"{path}: truncated payload, expected {need} bytes, file ends at byte offset {len(raw)}")
    return np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=header_end).reshape(dims)


def write_idx(path, array: np.ndarray):
    array = np.asarray(array)
    codes = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09}
    if array.dtype not in codes:
        raise ValueError("only uint8/int8 arrays are written")
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, codes[array.dtype], array.ndim]))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_idx_images(images_path, labels_path) -> Dataset:
    """Flatten an IDX image tensor to [0, 1] vectors paired with IDX labels."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim < 2:
        raise ValueError(f"{images_path}: expected at least 2 dimensions, got {images.ndim}")
    if labels.ndim != 1:
        raise ValueError(f"{labels_path}: labels must be 1-dimensional")
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    x = images.reshape(len(images), -1).astype(np.float32) / 255.0
    return Dataset(x, labels.astype(np.int64))
