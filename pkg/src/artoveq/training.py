"""Training procedures for the multi-rate quantized encoder/decoder.

Three schedules share one loss builder:

* ``variable_rate``: warm start, LBG initialisation, then one stage per
  resolution ``l = 1..L`` optimising the cumulative loss over every
  resolution ``j <= l`` plus a drift penalty on the previously learned prefix.
* ``mixed_resolution``: same warm start and LBG, then per-segment resolution
  steps; segment 1 climbs to ``L`` before segment 2 moves, and so on.
* ``progressive``: warm start, no LBG; each level adds one randomly
  initialised pair of difference vectors.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import gradcore as gc
from . import vq
from .codebook import LBGConfig, NestedCodebook, ProgressiveCodebook, lbg_fit
from .data import Dataset
from .gradcore import SGD, Adam, Tensor
from .taskmodel import TaskModel
from .vq import FeatureBlock, LossConfig

log = logging.getLogger(__name__)

SCHEDULES = ("variable_rate", "mixed_resolution", "progressive")


@dataclass
class TrainPlan:
    max_level: int = 8
    warmstart_epochs: int = 20
    epochs_per_level: int = 4
    batch_size: int = 64
    lr: float = 1e-2
    momentum: float = 0.9
    optimizer: str = "sgd"
    seed: int = 0
    loss: LossConfig | None = None
    schedule: str = "variable_rate"
    mixed_order: str = "sequential"
    lbg_split_perturbation: float = 0.01
    lbg_max_iterations: int = 100
    lbg_convergence_threshold: float = 1e-5

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.mixed_order not in ("sequential", "round_robin"):
            raise ValueError("mixed_order must be 'sequential' or 'round_robin'")
        if self.loss is None:
            self.loss = LossConfig.default(self.max_level)
        if len(self.loss.beta_per_level) != self.max_level:
            raise ValueError("loss config needs one beta/eta per level")

    def lbg_config(self, size: int | None = None) -> LBGConfig:
        return LBGConfig(
            target_size=size or (1 << self.max_level),
            split_perturbation=self.lbg_split_perturbation,
            max_iterations=self.lbg_max_iterations,
            convergence_threshold=self.lbg_convergence_threshold,
        )

    def make_optimizer(self, params: list[Tensor]):
        if self.optimizer == "adam":
            return Adam(params, lr=self.lr)
        return SGD(params, lr=self.lr, momentum=self.momentum)

    def rng(self, *stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, *stream])


# stream ids handed to TrainPlan.rng
_WARMSTART, _STAGE3, _MIXED, _PROGRESSIVE, _FIXED, _FINETUNE, _INIT = range(7)


@dataclass
class StageState:
    level: int
    codebook: NestedCodebook | ProgressiveCodebook
    snapshot: np.ndarray | None = None
    optimizer: SGD | None = None


@dataclass
class LossParts:
    total: Tensor
    task: float = 0.0
    vq: float = 0.0
    commitment: float = 0.0
    drift: float = 0.0
    decoder_passes: int = 0


class EpochLog:
    """Collects one record per epoch; optionally streams them as JSON lines."""

    def __init__(self, stream=None):
        self.records: list[dict] = []
        self.stream = stream
        self._start = time.perf_counter()

    def add(self, **record):
        record["wall_time"] = round(time.perf_counter() - self._start, 4)
        self.records.append(record)
        if self.stream is not None:
            self.stream.write(json.dumps(record) + "\n")
            self.stream.flush()


# ---------------------------------------------------------------------------
# losses


def quantized_terms(model: TaskModel, cb, fb: FeatureBlock, y, levels, betas) -> LossParts:
    """Task loss at one per-segment allocation plus its VQ and commitment terms.

    ``levels`` and ``betas`` hold one entry per segment. The squared norms are
    summed over segments and averaged over the batch.
    """
    M = fb.num_segments
    levels = np.broadcast_to(np.asarray(levels, dtype=np.int64), (M,))
    row_levels = np.tile(levels, fb.batch)
    x_seg = fb.segments
    idx = vq.assign(x_seg.data, cb, levels)
    z = vq.lookup(cb, idx, row_levels)
    logits = model.decode_logits(fb.join(vq.straight_through(x_seg, z)))
    task = gc.cross_entropy(logits, y)

    codebook_sq = gc.squared_l2_norm(gc.sub(gc.stop_gradient(x_seg), z), axis=1)
    commit_sq = gc.squared_l2_norm(gc.sub(x_seg, gc.stop_gradient(z)), axis=1)
    row_beta = np.tile(np.broadcast_to(np.asarray(betas, dtype=x_seg.data.dtype), (M,)), fb.batch)
    inv_b = 1.0 / fb.batch
    vq_term = gc.mul(gc.sum(codebook_sq), inv_b)
    commit_term = gc.mul(gc.sum(gc.mul(commit_sq, row_beta)), inv_b)
    total = gc.add(gc.add(task, vq_term), commit_term)
    return LossParts(total, task.item(), vq_term.item(), commit_term.item(), 0.0, 1)


def _accumulate(parts: list[LossParts], drift: Tensor | None, eta: float) -> LossParts:
    total = parts[0].total
    for p in parts[1:]:
        total = gc.add(total, p.total)
    drift_value = 0.0
    if drift is not None and eta > 0:
        total = gc.add(total, gc.mul(drift, eta))
        drift_value = eta * drift.item()
    return LossParts(
        total,
        task=sum(p.task for p in parts),
        vq=sum(p.vq for p in parts),
        commitment=sum(p.commitment for p in parts),
        drift=drift_value,
        decoder_passes=sum(p.decoder_passes for p in parts),
    )


def level_loss(model: TaskModel, cb, fb: FeatureBlock, y, level: int, cfg: LossConfig,
               snapshot: np.ndarray | None = None) -> LossParts:
    """Cumulative objective of training stage ``level``.

    Sums, for every resolution ``j <= level``, the task loss with all segments
    quantized by the first ``2**j`` codewords and that resolution's VQ and
    commitment terms; adds ``eta_level`` times the drift of the first
    ``2**(level-1)`` codewords away from ``snapshot``.
    """
    parts = [quantized_terms(model, cb, fb, y, j, cfg.beta(j)) for j in range(1, level + 1)]
    drift = None
    if snapshot is not None and isinstance(cb, NestedCodebook) and len(snapshot):
        drift = vq.drift_penalty(vq.prefix(cb, len(snapshot)), snapshot)
    return _accumulate(parts, drift, cfg.eta(level))


def overall_loss(model: TaskModel, cb, fb: FeatureBlock, y, cfg: LossConfig,
                 snapshots: dict[int, np.ndarray] | None = None, top: int | None = None) -> Tensor:
    """Sum of the stage objectives over ``l = 1..top``."""
    top = top or cb.max_level
    snapshots = snapshots or {}
    total = None
    for level in range(1, top + 1):
        part = level_loss(model, cb, fb, y, level, cfg, snapshots.get(level)).total
        total = part if total is None else gc.add(total, part)
    return total


def allocation_loss(model: TaskModel, cb, fb: FeatureBlock, y, allocation, cfg: LossConfig,
                    snapshot: np.ndarray | None = None, eta: float = 0.0) -> LossParts:
    """Mixed-resolution objective: one pass at the current per-segment allocation."""
    betas = [cfg.beta(int(a)) for a in allocation]
    parts = [quantized_terms(model, cb, fb, y, allocation, betas)]
    drift = None
    if snapshot is not None and len(snapshot):
        drift = vq.drift_penalty(vq.prefix(cb, len(snapshot)), snapshot)
    return _accumulate(parts, drift, eta)


# ---------------------------------------------------------------------------
# generic epoch loop


def _run_epochs(data: Dataset, plan: TrainPlan, params: list[Tensor], epochs: int,
                loss_fn: Callable[[np.ndarray, np.ndarray], LossParts], rng: np.random.Generator,
                epoch_log: EpochLog | None, stage: str, level: int | None = None, **extra):
    opt = plan.make_optimizer(params)
    for epoch in range(epochs):
        sums = np.zeros(5)
        n_batches = 0
        for xb, yb in data.batches(plan.batch_size, rng):
            opt.zero_grad()
            parts = loss_fn(xb, yb)
            parts.total.backward()
            opt.step()
            sums += (parts.total.item(), parts.task, parts.vq, parts.commitment, parts.drift)
            n_batches += 1
        means = sums / max(n_batches, 1)
        if epoch_log is not None:
            epoch_log.add(stage=stage, level=level, epoch=epoch, loss=float(means[0]),
                          task=float(means[1]), vq=float(means[2]), commitment=float(means[3]),
                          drift=float(means[4]), **extra)
    opt.zero_grad()
    return opt


# ---------------------------------------------------------------------------
# stage 1 / stage 2


def init_model(data: Dataset, plan: TrainPlan, num_segments: int, dim: int, num_classes: int | None = None,
               **arch) -> TaskModel:
    seed = int(plan.rng(_INIT).integers(2**31))
    return TaskModel.build(data.x.shape[1], num_classes or data.num_classes, num_segments, dim, seed=seed, **arch)


def stage1_warmstart(model: TaskModel, data: Dataset, plan: TrainPlan, epoch_log: EpochLog | None = None) -> TaskModel:
    """Train encoder and decoder end to end with no quantizer in the path."""
    if len(data) == 0:
        raise ValueError("empty dataset")

    def loss_fn(xb, yb):
        loss = model.warmstart_loss(xb, yb)
        return LossParts(loss, task=loss.item())

    _run_epochs(data, plan, model.parameters(), plan.warmstart_epochs, loss_fn,
                plan.rng(_WARMSTART), epoch_log, "warmstart")
    return model


def encoder_outputs(model: TaskModel, data: Dataset, chunk: int = 1024) -> np.ndarray:
    """All encoder sub-vectors of a dataset, shape ``(len(data) * M, d)``."""
    out = [model.encode(data.x[s : s + chunk]).segments.data for s in range(0, len(data), chunk)]
    return np.concatenate(out)


def stage2_codebook_init(model: TaskModel, data: Dataset, cfg: LBGConfig) -> np.ndarray:
    points = encoder_outputs(model, data)
    if len(points) < cfg.target_size:
        raise ValueError(f"{len(points)} encoder sub-vectors cannot seed {cfg.target_size} codewords")
    return lbg_fit(points, cfg).codewords


# ---------------------------------------------------------------------------
# stage 3 variants


def stage3_joint_adaptation(model: TaskModel, lbg_codewords: np.ndarray, data: Dataset, plan: TrainPlan,
                            epoch_log: EpochLog | None = None) -> NestedCodebook:
    lbg_codewords = np.asarray(lbg_codewords, dtype=gc.default_dtype())
    cb = NestedCodebook(lbg_codewords)
    rng = plan.rng(_STAGE3)
    for level in range(1, cb.max_level + 1):
        state = _enter_level(cb, lbg_codewords, level)
        _run_epochs(
            data, plan, model.parameters() + [cb.table], plan.epochs_per_level,
            lambda xb, yb, s=state: level_loss(model, cb, model.encode(xb), yb, s.level, plan.loss, s.snapshot),
            rng, epoch_log, "joint", level,
        )
    return cb


def _enter_level(cb: NestedCodebook, lbg_codewords: np.ndarray, level: int) -> StageState:
    half = 1 << (level - 1)
    start = 0 if level == 1 else half
    cb.table.data[start : 2 * half] = lbg_codewords[start : 2 * half]
    snapshot = cb.table.data[:half].copy() if level > 1 else None
    return StageState(level, cb, snapshot)


def mixed_schedule(num_segments: int, max_level: int, order: str = "sequential") -> list[tuple[int, ...]]:
    """Per-phase allocation vectors for mixed-resolution training."""
    if order == "sequential":
        phases = []
        for m in range(num_segments):
            for level in range(1, max_level + 1):
                alloc = [max_level] * m + [level] + [1] * (num_segments - m - 1)
                phases.append(tuple(alloc))
        return phases
    alloc = [1] * num_segments
    phases = [tuple(alloc)]
    while min(alloc) < max_level:
        m = alloc.index(min(alloc))
        alloc[m] += 1
        phases.append(tuple(alloc))
    return phases


def stage3_mixed_resolution(model: TaskModel, lbg_codewords: np.ndarray, data: Dataset, plan: TrainPlan,
                            epoch_log: EpochLog | None = None) -> NestedCodebook:
    lbg_codewords = np.asarray(lbg_codewords, dtype=gc.default_dtype())
    cb = NestedCodebook(lbg_codewords)
    rng = plan.rng(_MIXED)
    reached = 0
    for phase, alloc in enumerate(mixed_schedule(model.num_segments, cb.max_level, plan.mixed_order)):
        top = max(alloc)
        snapshot, eta = None, 0.0
        while reached < top:
            reached += 1
            state = _enter_level(cb, lbg_codewords, reached)
            snapshot, eta = state.snapshot, plan.loss.eta(reached)
        _run_epochs(
            data, plan, model.parameters() + [cb.table], plan.epochs_per_level,
            lambda xb, yb, a=alloc, s=snapshot, e=eta: allocation_loss(
                model, cb, model.encode(xb), yb, a, plan.loss, s, e),
            rng, epoch_log, "mixed", top, phase=phase, allocation=list(alloc),
        )
    return cb


def train_progressive(model: TaskModel, data: Dataset, plan: TrainPlan, warm: bool = False,
                      epoch_log: EpochLog | None = None) -> ProgressiveCodebook:
    """Warm start (unless ``warm``), then learn one difference pair per level."""
    if not warm:
        stage1_warmstart(model, data, plan, epoch_log)
    rng = plan.rng(_PROGRESSIVE)
    pcb = ProgressiveCodebook(np.zeros((plan.max_level, 2, model.dim)))
    cfg = LossConfig(plan.loss.beta_per_level, [0.0] * plan.max_level)
    for level in range(1, plan.max_level + 1):
        pcb.randomize_level(level, rng)
        _run_epochs(
            data, plan, model.parameters() + pcb.pairs[:level], plan.epochs_per_level,
            lambda xb, yb, lv=level: level_loss(model, pcb, model.encode(xb), yb, lv, cfg),
            rng, epoch_log, "progressive", level,
        )
    return pcb


def train_variable_rate(model: TaskModel, data: Dataset, plan: TrainPlan, warm: bool = False,
                        epoch_log: EpochLog | None = None) -> NestedCodebook:
    if not warm:
        stage1_warmstart(model, data, plan, epoch_log)
    lbg = stage2_codebook_init(model, data, plan.lbg_config())
    return stage3_joint_adaptation(model, lbg, data, plan, epoch_log)


def train_mixed(model: TaskModel, data: Dataset, plan: TrainPlan, warm: bool = False,
                epoch_log: EpochLog | None = None) -> NestedCodebook:
    if not warm:
        stage1_warmstart(model, data, plan, epoch_log)
    lbg = stage2_codebook_init(model, data, plan.lbg_config())
    return stage3_mixed_resolution(model, lbg, data, plan, epoch_log)


# ---------------------------------------------------------------------------
# baselines


def train_fixed_rate(model: TaskModel, data: Dataset, level: int, plan: TrainPlan, epochs: int,
                     epoch_log: EpochLog | None = None) -> NestedCodebook:
    """Single-resolution VQ-VAE: LBG with ``2**level`` codewords, then the plain VQ loss.

    ``model`` should already be warm-started.
    """
    lbg = stage2_codebook_init(model, data, plan.lbg_config(1 << level))
    cb = NestedCodebook(lbg)
    beta = plan.loss.beta(level)
    _run_epochs(
        data, plan, model.parameters() + [cb.table], epochs,
        lambda xb, yb: quantized_terms(model, cb, model.encode(xb), yb, level, beta),
        plan.rng(_FIXED, level), epoch_log, "fixed_rate", level,
    )
    return cb


def train_lbg_baseline(model: TaskModel, data: Dataset, level: int, plan: TrainPlan, epochs: int,
                       epoch_log: EpochLog | None = None) -> NestedCodebook:
    """LBG codebook on frozen encoder outputs; only the decoder is fine-tuned."""
    cb = NestedCodebook(stage2_codebook_init(model, data, plan.lbg_config(1 << level)), requires_grad=False)

    def loss_fn(xb, yb):
        fb = model.encode(xb)
        idx = vq.assign(fb.segments.data, cb, np.full(model.num_segments, level))
        z = Tensor(cb.codewords[idx].reshape(fb.batch, -1))
        loss = gc.cross_entropy(model.decode_logits(z), yb)
        return LossParts(loss, task=loss.item())

    _run_epochs(data, plan, model.decoder.parameters(), epochs, loss_fn,
                plan.rng(_FINETUNE, level), epoch_log, "lbg_finetune", level)
    return cb


# ---------------------------------------------------------------------------
# evaluation


def predict(model: TaskModel, cb, levels, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Predicted labels with every segment quantized at ``levels``; ``cb=None`` skips quantization."""
    preds = []
    for s in range(0, len(x), chunk):
        fb = model.encode(x[s : s + chunk])
        if cb is None:
            logits = model.decode_logits(fb.source).data
        else:
            qr = vq.quantize_block(fb, cb, levels)
            logits = model.decode_logits(qr.quantized.reshape(fb.batch, -1)).data
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds)


def evaluate(model: TaskModel, cb, levels, data: Dataset, chunk: int = 1024) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) over ``data`` at the given allocation."""
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    correct, loss_sum = 0, 0.0
    for s in range(0, len(data), chunk):
        xb, yb = data.x[s : s + chunk], data.y[s : s + chunk]
        fb = model.encode(xb)
        if cb is None:
            z = fb.source
        else:
            z = Tensor(vq.quantize_block(fb, cb, levels).quantized.reshape(fb.batch, -1))
        logits = model.decode_logits(z)
        correct += int((np.argmax(logits.data, axis=1) == yb).sum())
        loss_sum += gc.cross_entropy(logits, yb).item() * len(yb)
    return correct / len(data), loss_sum / len(data)
