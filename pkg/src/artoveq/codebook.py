"""Codebook containers and classical fitting.

``NestedCodebook`` keeps a single ordered list of ``2**max_level`` codewords;
the level-``l`` codebook is its first ``2**l`` rows, so every lower level is a
prefix of every higher one.

``ProgressiveCodebook`` keeps one pair of difference vectors per level. The
level-``l`` codewords are all sums picking one vector from each of the first
``l`` pairs, addressed by the bit string of choices (first level = most
significant bit).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .gradcore import Tensor, default_dtype

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _check_level(level: int, max_level: int):
    if not 1 <= level <= max_level:
        raise ValueError(f"level {level} outside [1, {max_level}]")


class NestedCodebook:
    """Single codebook serving every resolution from 1 to ``max_level`` bits."""

    def __init__(self, codewords, requires_grad: bool = True):
        codewords = np.asarray(codewords, dtype=default_dtype())
        if codewords.ndim != 2:
            raise ValueError("codewords must be a (count, dim) array")
        count = codewords.shape[0]
        if count < 2 or not _is_power_of_two(count):
            raise ValueError(f"codeword count must be a power of two >= 2, got {count}")
        self.table = Tensor(codewords.copy(), requires_grad=requires_grad)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def max_level(self) -> int:
        return self.table.shape[0].bit_length() - 1

    @property
    def codewords(self) -> np.ndarray:
        return self.table.data

    def sub_codebook(self, level: int) -> np.ndarray:
        """First ``2**level`` codewords, as a view into the live table."""
        _check_level(level, self.max_level)
        return self.table.data[: 1 << level]

    def __len__(self):
        return self.table.shape[0]


def sub_codebook(cb: NestedCodebook, level: int) -> np.ndarray:
    return cb.sub_codebook(level)


class ProgressiveCodebook:
    """Successive-refinement codebook built from per-level difference pairs."""

    def __init__(self, pairs, requires_grad: bool = True):
        pairs = np.asarray(pairs, dtype=default_dtype())
        if pairs.ndim != 3 or pairs.shape[1] != 2:
            raise ValueError("pairs must have shape (levels, 2, dim)")
        self.pairs = [Tensor(p.copy(), requires_grad=requires_grad) for p in pairs]

    @classmethod
    def random(cls, max_level: int, dim: int, rng: np.random.Generator) -> "ProgressiveCodebook":
        cb = cls(np.zeros((max_level, 2, dim)))
        for level in range(1, max_level + 1):
            cb.randomize_level(level, rng)
        return cb

    def randomize_level(self, level: int, rng: np.random.Generator):
        _check_level(level, self.max_level)
        half_width = 0.5 / np.sqrt(self.dim)
        self.pairs[level - 1].data[...] = rng.uniform(-half_width, half_width, size=(2, self.dim))

    @property
    def dim(self) -> int:
        return self.pairs[0].shape[1]

    @property
    def max_level(self) -> int:
        return len(self.pairs)

    def difference_pairs(self) -> np.ndarray:
        return np.stack([p.data for p in self.pairs])

    def materialize(self, level: int) -> np.ndarray:
        """All ``2**level`` codewords, built by repeated Minkowski sums."""
        _check_level(level, self.max_level)
        words = np.zeros((1, self.dim), dtype=self.pairs[0].data.dtype)
        for j in range(level):
            pair = self.pairs[j].data
            words = (words[:, None, :] + pair[None, :, :]).reshape(-1, self.dim)
        return words

    def codeword(self, bits: str) -> np.ndarray:
        """Codeword addressed by a bit string, summed level by level."""
        if len(bits) > self.max_level:
            raise ValueError(f"bit string longer than {self.max_level} levels")
        word = np.zeros(self.dim, dtype=self.pairs[0].data.dtype)
        for j, b in enumerate(bits):
            word = word + self.pairs[j].data[int(b)]
        return word


def materialize(pcb: ProgressiveCodebook, level: int) -> np.ndarray:
    return pcb.materialize(level)


def index_bits(index: int, level: int) -> str:
    return format(index, f"0{level}b") if level else ""


def refine_index(prefix_bits: str, next_bit: int | str) -> str:
    """Extend a successive-refinement address by one level."""
    bit = str(int(next_bit))
    if bit not in "01":
        raise ValueError(f"next_bit must be 0 or 1, got {next_bit!r}")
    return prefix_bits + bit


def bit_planes(indices: np.ndarray, level: int) -> np.ndarray:
    """Split level-``level`` indices into per-level choices, shape (level, n)."""
    indices = np.asarray(indices, dtype=np.int64)
    shifts = np.arange(level - 1, -1, -1)
    return (indices[None, :] >> shifts[:, None]) & 1


# ---------------------------------------------------------------------------
# LBG


@dataclass
class LBGConfig:
    target_size: int
    split_perturbation: float = 0.01
    max_iterations: int = 100
    convergence_threshold: float = 1e-5

    def __post_init__(self):
        if not _is_power_of_two(self.target_size):
            raise ValueError(f"target_size must be a power of two, got {self.target_size}")
        if self.split_perturbation <= 0:
            raise ValueError("split_perturbation must be positive")
        if self.max_iterations < 1 or self.convergence_threshold <= 0:
            raise ValueError("max_iterations and convergence_threshold must be positive")


@dataclass
class LBGResult:
    codewords: np.ndarray
    distortion_history: list[float] = field(default_factory=list)

    @property
    def distortion(self) -> float:
        return self.distortion_history[-1]


def squared_distances(points: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, accumulated in 64-bit."""
    p = np.asarray(points, dtype=np.float64)
    c = np.asarray(codewords, dtype=np.float64)
    diff = p[:, None, :] - c[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def nearest_indices(points: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    # argmin keeps the first minimum, so ties go to the lowest index
    return np.argmin(squared_distances(points, codewords), axis=1)


def lbg_objective(points: np.ndarray, codewords: np.ndarray, normalizer: int | None = None) -> float:
    """Sum of (unsquared) distances to the nearest codeword over ``normalizer``."""
    d2 = squared_distances(points, codewords).min(axis=1)
    n = len(points) if normalizer is None else normalizer
    return float(np.sqrt(d2).sum() / n)


def _centroid_step(points: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    d2 = squared_distances(points, codewords)
    assign = np.argmin(d2, axis=1)
    per_point = d2[np.arange(len(points)), assign]
    counts = np.bincount(assign, minlength=len(codewords))
    sums = np.zeros_like(codewords)
    np.add.at(sums, assign, points)
    moved = codewords.copy()
    live = counts > 0
    moved[live] = sums[live] / counts[live, None]
    if live.all():
        return moved
    # empty cells are re-seeded on the worst-represented points
    reseeded = moved.copy()
    worst = np.argsort(-per_point, kind="stable")
    for k, i in zip(np.flatnonzero(~live), worst):
        reseeded[k] = points[i]
    if _distortion(points, reseeded) <= _distortion(points, moved):
        return reseeded
    return moved


def _distortion(points: np.ndarray, codewords: np.ndarray) -> float:
    return float(squared_distances(points, codewords).min(axis=1).mean())


def _lloyd(points: np.ndarray, codewords: np.ndarray, cfg: LBGConfig, history: list[float]) -> np.ndarray:
    prev = None
    for _ in range(cfg.max_iterations):
        codewords = _centroid_step(points, codewords)
        distortion = _distortion(points, codewords)
        history.append(distortion)
        if prev is not None and prev - distortion <= cfg.convergence_threshold * prev:
            break
        prev = distortion
    return codewords


def lbg_fit(points, cfg: LBGConfig) -> LBGResult:
    """Fit ``cfg.target_size`` codewords by binary splitting plus Lloyd updates.

    The codeword order is fixed by the splitting schedule: after each split the
    ``(1 + eps)`` copies occupy the first half and the ``(1 - eps)`` copies the
    second half, so the first ``2**l`` codewords descend from the level-``l``
    solution.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be an (n, dim) array")
    if not np.all(np.isfinite(points)):
        raise ValueError("points contain non-finite values")
    if len(points) < cfg.target_size:
        raise ValueError(f"need at least {cfg.target_size} points, got {len(points)}")

    eps = cfg.split_perturbation
    codewords = points.mean(axis=0, keepdims=True)
    history: list[float] = [_distortion(points, codewords)]
    while len(codewords) < cfg.target_size:
        codewords = np.concatenate([codewords * (1 + eps), codewords * (1 - eps)])
        codewords = _lloyd(points, codewords, cfg, history)
    log.debug("lbg: %d codewords, distortion %.6g", len(codewords), history[-1])
    return LBGResult(codewords=codewords, distortion_history=history)


# ---------------------------------------------------------------------------
# serialization


def _rows(arr: np.ndarray) -> list:
    a = np.asarray(arr, dtype=np.float32)
    return [[float(f"{v:.9g}") for v in row] for row in a.reshape(-1, a.shape[-1])]


def dumps_codebook(cb: NestedCodebook | ProgressiveCodebook) -> str:
    if isinstance(cb, NestedCodebook):
        doc = {
            "format_version": FORMAT_VERSION,
            "mode": "nested",
            "dim": cb.dim,
            "max_level": cb.max_level,
            "codewords": _rows(cb.codewords),
        }
    else:
        pairs = cb.difference_pairs()
        doc = {
            "format_version": FORMAT_VERSION,
            "mode": "progressive",
            "dim": cb.dim,
            "max_level": cb.max_level,
            "difference_pairs": [_rows(p) for p in pairs],
        }
    return json.dumps(doc, indent=1)


def loads_codebook(text: str) -> NestedCodebook | ProgressiveCodebook:
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported codebook format_version {doc.get('format_version')!r}")
    dim, max_level = int(doc["dim"]), int(doc["max_level"])
    if doc["mode"] == "nested":
        words = np.asarray(doc["codewords"], dtype=np.float32)
        if words.shape != (1 << max_level, dim):
            raise ValueError(f"codewords shape {words.shape} does not match dim/max_level")
        return NestedCodebook(words)
    if doc["mode"] == "progressive":
        pairs = np.asarray(doc["difference_pairs"], dtype=np.float32)
        if pairs.shape != (max_level, 2, dim):
            raise ValueError(f"difference_pairs shape {pairs.shape} does not match dim/max_level")
        return ProgressiveCodebook(pairs)
    raise ValueError(f"unknown codebook mode {doc['mode']!r}")


def save_codebook(cb, path):
    with open(path, "w") as fh:
        fh.write(dumps_codebook(cb))


def load_codebook(path):
    with open(path) as fh:
        return loads_codebook(fh.read())
