"""Sub-vector quantization with straight-through gradients and VQ loss terms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .codebook import NestedCodebook, nearest_indices
from .gradcore import Tensor


@dataclass
class FeatureBlock:
    """Encoder output cut into ``M`` contiguous segments of size ``d``.

    ``source`` is the ``(batch, M*d)`` encoder output; ``segments`` is the
    ``(batch*M, d)`` view used for quantization, row ``b*M + m`` holding
    segment ``m`` of sample ``b``.
    """

    source: Tensor
    dim: int

    def __post_init__(self):
        width = self.source.shape[-1]
        if width % self.dim:
            raise gc.ShapeError(f"encoder output length {width} not divisible by d={self.dim}")
        self._segments: Tensor | None = None

    @property
    def num_segments(self) -> int:
        return self.source.shape[-1] // self.dim

    @property
    def batch(self) -> int:
        return self.source.shape[0]

    @property
    def segments(self) -> Tensor:
        if self._segments is None:
            self._segments = gc.reshape(self.source, (-1, self.dim))
        return self._segments

    def segment(self, m: int) -> np.ndarray:
        """Values of segment ``m`` for every sample, shape ``(batch, d)``."""
        return self.source.data[:, m * self.dim : (m + 1) * self.dim]

    def join(self, segments: Tensor) -> Tensor:
        """Inverse of the split: ``(batch*M, d)`` back to ``(batch, M*d)``."""
        return gc.reshape(segments, (self.batch, self.num_segments * self.dim))


@dataclass
class QuantizationResult:
    indices: np.ndarray  # (batch, M) codeword index per segment
    quantized: np.ndarray  # (batch, M, d) selected codewords
    per_segment_levels: tuple[int, ...]
    bits_used: int = field(init=False)

    def __post_init__(self):
        self.bits_used = int(sum(self.per_segment_levels))


@dataclass
class LossConfig:
    beta_per_level: list[float]
    eta_per_level: list[float]

    @classmethod
    def default(cls, max_level: int) -> "LossConfig":
        return cls([0.25] * max_level, [0.0] + [1.0] * (max_level - 1))

    def __post_init__(self):
        if len(self.beta_per_level) != len(self.eta_per_level):
            raise ValueError("beta and eta lists must both have one entry per level")
        if any(b <= 0 for b in self.beta_per_level):
            raise ValueError("every beta must be > 0")
        if any(e < 0 for e in self.eta_per_level):
            raise ValueError("every eta must be >= 0")

    def beta(self, level: int) -> float:
        return self.beta_per_level[level - 1]

    def eta(self, level: int) -> float:
        return 0.0 if level == 1 else self.eta_per_level[level - 1]


def nearest_codeword(x, codewords) -> tuple[int, np.ndarray]:
    codewords = np.asarray(codewords)
    if codewords.ndim != 2 or len(codewords) == 0:
        raise ValueError("codebook is empty")
    x = np.asarray(x)
    if x.shape != (codewords.shape[1],):
        raise ValueError(f"vector of shape {x.shape} against codewords of dim {codewords.shape[1]}")
    i = int(nearest_indices(x[None, :], codewords)[0])
    return i, codewords[i]


def _expand_levels(levels, num_segments: int) -> np.ndarray:
    levels = np.broadcast_to(np.asarray(levels, dtype=np.int64), (num_segments,))
    return levels


def assign(segments: np.ndarray, cb, levels: np.ndarray) -> np.ndarray:
    """Index of the nearest level-``levels[m]`` codeword for every segment row.

    ``segments`` is ``(batch*M, d)`` with segment-major rows per sample;
    ``levels`` has one entry per segment position.
    """
    M = len(levels)
    rows = segments.reshape(-1, M, segments.shape[-1])
    out = np.empty(rows.shape[:2], dtype=np.int64)
    for level in np.unique(levels):
        cols = np.flatnonzero(levels == level)
        words = cb.sub_codebook(level) if isinstance(cb, NestedCodebook) else cb.materialize(level)
        pts = rows[:, cols, :].reshape(-1, rows.shape[-1])
        out[:, cols] = nearest_indices(pts, words).reshape(-1, len(cols))
    return out.reshape(-1)


def lookup(cb, indices: np.ndarray, levels_per_row: np.ndarray) -> Tensor:
    """Differentiable codewords for ``indices`` (one per segment row)."""
    if isinstance(cb, NestedCodebook):
        return gc.take_rows(cb.table, indices)
    # progressive: sum the chosen difference vector of every level in use
    top = int(levels_per_row.max())
    out = None
    for j in range(top):
        active = levels_per_row > j
        shift = np.maximum(levels_per_row - 1 - j, 0)
        choice = (indices >> shift) & 1
        picked = gc.take_rows(cb.pairs[j], choice)
        if not active.all():
            picked = gc.mul(picked, active[:, None].astype(picked.data.dtype))
        out = picked if out is None else gc.add(out, picked)
    return out


def quantize_block(fb: FeatureBlock, cb, levels) -> QuantizationResult:
    M = fb.num_segments
    levels = _expand_levels(levels, M)
    max_level = cb.max_level
    if levels.min() < 1 or levels.max() > max_level:
        raise ValueError(f"levels must lie in [1, {max_level}], got {levels.tolist()}")
    idx = assign(fb.segments.data, cb, levels)
    words = lookup(cb, idx, np.tile(levels, fb.batch)).data
    return QuantizationResult(
        indices=idx.reshape(fb.batch, M),
        quantized=words.reshape(fb.batch, M, fb.dim),
        per_segment_levels=tuple(int(v) for v in levels),
    )


def straight_through(x_e: Tensor, z) -> Tensor:
    """Forward value ``z``; backward passes the output gradient to ``x_e`` unchanged."""
    x_e = gc.as_tensor(x_e)
    z_data = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=x_e.data.dtype)
    if z_data.shape != x_e.shape:
        raise gc.ShapeError(f"straight_through: {x_e.shape} vs {z_data.shape}")
    return gc._make(z_data.copy(), (x_e,), lambda g: (g,), "straight_through")


def vq_loss_terms(x_e: Tensor, z: Tensor, beta: float) -> Tensor:
    """Codebook term plus beta-weighted commitment term, summed over all entries.

    For batched ``(n, d)`` inputs, divide by the batch size yourself.
    """
    codebook_term = gc.squared_l2_norm(gc.sub(gc.stop_gradient(x_e), z))
    commitment = gc.squared_l2_norm(gc.sub(x_e, gc.stop_gradient(z)))
    return gc.add(codebook_term, gc.mul(commitment, beta))


def drift_penalty(current: Tensor, snapshot: np.ndarray) -> Tensor:
    """Squared distance between the live codeword prefix and its frozen copy."""
    current = gc.as_tensor(current)
    snapshot = np.asarray(snapshot)
    if current.shape != snapshot.shape:
        raise ValueError(f"drift_penalty: prefix shapes {current.shape} vs {snapshot.shape}")
    if current.data.size == 0:
        return Tensor(0.0)
    return gc.squared_l2_norm(gc.sub(current, Tensor(snapshot, dtype=snapshot.dtype)))


def prefix(cb: NestedCodebook, count: int) -> Tensor:
    """Differentiable view of the first ``count`` codewords."""
    return gc.take_rows(cb.table, np.arange(count))


def distortion(fb: FeatureBlock, result: QuantizationResult) -> np.ndarray:
    """Per-segment squared error, shape ``(batch, M)``."""
    x = fb.source.data.reshape(fb.batch, fb.num_segments, fb.dim).astype(np.float64)
    return ((x - result.quantized) ** 2).sum(axis=-1)

