"""Experiment configuration, orchestration and result files.

A single flat TOML document configures a run. :class:`Benchmark` trains
each scheme lazily and at most once, so a sweep, the mixed comparison and
the dynamic-channel table can share models.
"""

from __future__ import annotations

import copy
import csv
import io
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised only on 3.10
    import tomli as tomllib
import tomli_w

from . import channel as ch
from . import training as T
from .codebook import NestedCodebook, ProgressiveCodebook
from .data import Dataset, SyntheticTaskSpec, load_idx_images, make_synthetic
from .taskmodel import TaskModel
from .vq import LossConfig

# keys whose on-disk spelling differs from the attribute name
_ALIASES = {"latency-rule": "latency_rule"}
_SPELLING = {v: k for k, v in _ALIASES.items()}


@dataclass
class ExperimentConfig:
    seed: int = 0
    # task
    num_classes: int = 8
    input_dim: int = 16
    scale: float = 1.0
    mean_radius: float = 3.0
    n_train: int = 2000
    n_test: int = 500
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    # architecture
    num_segments: int = 1
    dim: int = 2
    max_level: int = 8
    encoder_hidden: list[int] = field(default_factory=lambda: [64, 32])
    decoder_hidden: list[int] = field(default_factory=lambda: [64])
    nonlinearity: str = "leaky_relu"
    # optimisation
    warmstart_epochs: int = 20
    epochs_per_level: int = 20
    fixed_rate_epochs: int = 20
    lbg_finetune_fraction: float = 0.2
    batch_size: int = 64
    lr: float = 3e-3
    momentum: float = 0.9
    optimizer: str = "sgd"
    beta: float = 0.05
    eta: float = 1.0
    mixed_order: str = "sequential"
    lbg_split_perturbation: float = 0.01
    lbg_max_iterations: int = 100
    lbg_convergence_threshold: float = 1e-5
    # channel
    k: list[float] = field(default_factory=lambda: [0.0, -0.25, 0.25])
    steps: int = 1000
    tau_max: float = 1.0
    capacity_scale: float = 0.0  # 0 means: derive C_t so that exactly b bits fit
    latency_rule: str = "eq4"
    single_rates: list[int] = field(default_factory=lambda: [1, 4, 8])

    def __post_init__(self):
        if isinstance(self.k, (int, float)):
            self.k = [float(self.k)]
        self.k = [float(v) for v in self.k]
        if self.latency_rule not in ch.LATENCY_RULES:
            raise ValueError(f"latency-rule must be one of {ch.LATENCY_RULES}")
        if not 0 < self.lbg_finetune_fraction <= 1:
            raise ValueError("lbg_finetune_fraction must lie in (0, 1]")
        if any(not 1 <= r <= self.max_level for r in self.single_rates):
            raise ValueError("single_rates must lie in 1..max_level")

    # -- (de)serialisation ----------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            name = _ALIASES.get(key, key)
            if name not in known:
                raise ValueError(f"unknown configuration key {key!r}")
            kwargs[name] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {_SPELLING.get(k, k): v for k, v in asdict(self).items()}

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path):
        Path(path).write_text(self.dumps())

    def replace(self, **changes) -> "ExperimentConfig":
        d = asdict(self)
        d.update(changes)
        return ExperimentConfig(**d)

    # -- derived objects ------------------------------------------------------

    def plan(self, schedule: str = "variable_rate") -> T.TrainPlan:
        L = self.max_level
        loss = LossConfig([self.beta] * L, [0.0] + [self.eta] * (L - 1))
        return T.TrainPlan(
            max_level=L, warmstart_epochs=self.warmstart_epochs, epochs_per_level=self.epochs_per_level,
            batch_size=self.batch_size, lr=self.lr, momentum=self.momentum, optimizer=self.optimizer,
            seed=self.seed, loss=loss, schedule=schedule, mixed_order=self.mixed_order,
            lbg_split_perturbation=self.lbg_split_perturbation, lbg_max_iterations=self.lbg_max_iterations,
            lbg_convergence_threshold=self.lbg_convergence_threshold,
        )

    def task_spec(self) -> SyntheticTaskSpec:
        return SyntheticTaskSpec(self.num_classes, self.input_dim, self.scale, self.mean_radius,
                                 self.n_train, self.n_test, self.seed)

    def load_data(self) -> tuple[Dataset, Dataset]:
        idx = (self.train_images, self.train_labels, self.test_images, self.test_labels)
        if any(idx):
            if not all(idx):
                raise ValueError("IDX input needs train/test images and labels")
            return load_idx_images(*idx[:2]), load_idx_images(*idx[2:])
        return make_synthetic(self.task_spec())

    def lbg_finetune_epochs(self) -> int:
        return max(1, round(self.lbg_finetune_fraction * self.max_level * self.epochs_per_level))


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return ExperimentConfig.from_dict(tomllib.load(fh))


# ---------------------------------------------------------------------------
# result tables


def fmt(value: float) -> str:
    return f"{value:.6g}"


SWEEP_COLUMNS = ("scheme", "d", "M", "allocation", "bits", "accuracy", "loss", "seed")


@dataclass(frozen=True)
class SweepRow:
    scheme: str
    d: int
    allocation: tuple[int, ...]
    accuracy: float
    loss: float
    seed: int

    @property
    def M(self) -> int:
        return len(self.allocation)

    @property
    def bits(self) -> int:
        return int(sum(self.allocation))

    def cells(self) -> list[str]:
        return [self.scheme, str(self.d), str(self.M), "-".join(map(str, self.allocation)),
                str(self.bits), fmt(self.accuracy), fmt(self.loss), str(self.seed)]


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def add(self, *args, **kw):
        self.rows.append(SweepRow(*args, **kw))

    def select(self, scheme: str) -> list[SweepRow]:
        return [r for r in self.rows if r.scheme == scheme]

    def accuracy(self, scheme: str) -> dict[tuple[int, ...], float]:
        return {r.allocation: r.accuracy for r in self.select(scheme)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            w.writerow(r.cells())
        return buf.getvalue()

    def write(self, path):
        Path(path).write_text(self.to_csv())


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# mixed allocations


def allocation_for_budget(budget: int, num_segments: int, max_level: int) -> tuple[int, ...]:
    """Non-increasing per-segment levels summing to ``budget``.

    Starts from all ones and repeatedly gives one more bit to the
    lowest-index segment that can take it while the vector stays
    non-increasing with neighbouring levels at most one apart, so the
    bits pile up as a staircase: 10 bits over 4 segments give (4, 3, 2, 1).
    """
    lo, hi = num_segments, num_segments * max_level
    if not lo <= budget <= hi:
        raise ValueError(f"budget {budget} outside [{lo}, {hi}]")
    alloc = [1] * num_segments
    for _ in range(budget - num_segments):
        for m in range(num_segments):
            v = alloc[m] + 1
            if v > max_level or (m > 0 and v > alloc[m - 1]):
                continue
            if m + 1 < num_segments and v - alloc[m + 1] > 1:
                continue
            alloc[m] = v
            break
        else:  # pragma: no cover - unreachable, kept as a guard
            raise RuntimeError(f"no segment can take another bit in {alloc}")
    return tuple(alloc)


def attainable_budgets(num_segments: int, max_level: int) -> list[int]:
    return list(range(num_segments, num_segments * max_level + 1))


# ---------------------------------------------------------------------------
# trained artefacts


class Benchmark:
    """Lazily trained schemes sharing one dataset and one warm-started model."""

    def __init__(self, cfg: ExperimentConfig, epoch_log: T.EpochLog | None = None):
        self.cfg = cfg
        self.epoch_log = epoch_log
        self.train, self.test = cfg.load_data()
        self._warm: TaskModel | None = None
        self._cache: dict = {}

    def _arch(self) -> dict:
        c = self.cfg
        return {"encoder": {"hidden": list(c.encoder_hidden), "nonlinearity": c.nonlinearity},
                "decoder": {"hidden": list(c.decoder_hidden), "nonlinearity": c.nonlinearity}}

    @property
    def warm(self) -> TaskModel:
        if self._warm is None:
            plan = self.cfg.plan()
            model = T.init_model(self.train, plan, self.cfg.num_segments, self.cfg.dim,
                                 self.cfg.num_classes, **self._arch())
            self._warm = T.stage1_warmstart(model, self.train, plan, self.epoch_log)
        return self._warm

    def use_warm(self, model: TaskModel):
        self._warm = model

    def _once(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def variable_rate(self) -> tuple[TaskModel, NestedCodebook]:
        def build():
            m = copy.deepcopy(self.warm)
            return m, T.train_variable_rate(m, self.train, self.cfg.plan(), warm=True, epoch_log=self.epoch_log)
        return self._once("variable_rate", build)

    def mixed(self) -> tuple[TaskModel, NestedCodebook]:
        def build():
            m = copy.deepcopy(self.warm)
            return m, T.train_mixed(m, self.train, self.cfg.plan("mixed_resolution"), warm=True,
                                    epoch_log=self.epoch_log)
        return self._once("mixed", build)

    def progressive(self) -> tuple[TaskModel, ProgressiveCodebook]:
        def build():
            m = copy.deepcopy(self.warm)
            return m, T.train_progressive(m, self.train, self.cfg.plan("progressive"), warm=True,
                                          epoch_log=self.epoch_log)
        return self._once("progressive", build)

    def fixed_rate(self, level: int) -> tuple[TaskModel, NestedCodebook]:
        def build():
            m = copy.deepcopy(self.warm)
            return m, T.train_fixed_rate(m, self.train, level, self.cfg.plan(), self.cfg.fixed_rate_epochs,
                                         self.epoch_log)
        return self._once(("fixed_rate", level), build)

    def lbg_baseline(self, level: int) -> tuple[TaskModel, NestedCodebook]:
        def build():
            m = copy.deepcopy(self.warm)
            return m, T.train_lbg_baseline(m, self.train, level, self.cfg.plan(),
                                           self.cfg.lbg_finetune_epochs(), self.epoch_log)
        return self._once(("lbg", level), build)

    def preset(self, key, model, cb):
        """Register an already trained scheme (e.g. loaded from disk)."""
        self._cache[key] = (model, cb)

    def correct(self, model: TaskModel, cb, levels) -> int:
        pred = T.predict(model, cb, levels, self.test.x)
        return int(np.sum(pred == self.test.y))


# ---------------------------------------------------------------------------
# experiments


def run_rate_sweep(cfg: ExperimentConfig, bench: Benchmark | None = None,
                   schemes=("artoveq", "fixed_rate", "lbg")) -> SweepResult:
    """Accuracy against bits per segment for every scheme and level."""
    bench = bench or Benchmark(cfg)
    M, L = cfg.num_segments, cfg.max_level
    res = SweepResult()
    for scheme in schemes:
        for level in range(1, L + 1):
            if scheme == "artoveq":
                model, cb = bench.variable_rate()
            elif scheme == "progressive":
                model, cb = bench.progressive()
            elif scheme == "fixed_rate":
                model, cb = bench.fixed_rate(level)
            elif scheme == "lbg":
                model, cb = bench.lbg_baseline(level)
            else:
                raise ValueError(f"unknown scheme {scheme!r}")
            acc, loss = T.evaluate(model, cb, level, bench.test)
            res.add(scheme, cfg.dim, (level,) * M, acc, loss, cfg.seed)
    return res


def run_mixed_vs_identical(cfg: ExperimentConfig, bench: Benchmark | None = None) -> SweepResult:
    """Mixed allocation at every budget, identical allocation where it exists."""
    bench = bench or Benchmark(cfg)
    model, cb = bench.mixed()
    M, L = cfg.num_segments, cfg.max_level
    res = SweepResult()
    for budget in attainable_budgets(M, L):
        alloc = allocation_for_budget(budget, M, L)
        acc, loss = T.evaluate(model, cb, alloc, bench.test)
        res.add("mixed", cfg.dim, alloc, acc, loss, cfg.seed)
        if budget % M == 0:
            same = (budget // M,) * M
            acc, loss = T.evaluate(model, cb, same, bench.test)
            res.add("identical", cfg.dim, same, acc, loss, cfg.seed)
    return res


SCENARIO_NAMES = {0.0: "S1", -0.25: "S2", 0.25: "S3"}
TABLE_COLUMNS = ("scheme", "scenario", "k", "d", "M", "accuracy", "seed")


def scenario_name(k: float) -> str:
    return SCENARIO_NAMES.get(k, f"k={k:g}")


@dataclass
class DynamicTable:
    d: int
    num_segments: int
    seed: int
    ks: list[float]
    accuracy: dict[str, dict[float, float]] = field(default_factory=dict)
    traces: dict[float, ch.ChannelTrace] = field(default_factory=dict, repr=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for scheme, per_k in self.accuracy.items():
            for k in self.ks:
                w.writerow([scheme, scenario_name(k), fmt(k), self.d, self.num_segments, fmt(per_k[k]), self.seed])
        return buf.getvalue()

    def to_text(self) -> str:
        heads = [scenario_name(k) for k in self.ks]
        width = max(len(s) for s in self.accuracy) + 2
        lines = [f"{'scheme':<{width}}" + "".join(f"{h:>10}" for h in heads)]
        for scheme, per_k in self.accuracy.items():
            lines.append(f"{scheme:<{width}}" + "".join(f"{100 * per_k[k]:>10.2f}" for k in self.ks))
        return "\n".join(lines) + "\n"

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("k", "t", "capacity", "budget", "level", "latency", "scheme", "correct"))
        for k in self.ks:
            for r in self.traces[k].rows():
                t, cap, budget, level, lat, scheme, correct = r
                w.writerow([fmt(k), t, fmt(cap), budget, level, fmt(lat), scheme, correct])
        return buf.getvalue()


def dynamic_schemes(cfg: ExperimentConfig, bench: Benchmark) -> list:
    L = cfg.max_level

    def nested(getter):
        return lambda level: bench.correct(*getter(), level)

    schemes = [
        ch.MultiFixedScheme("Multiple Fixed-Rate",
                            {l: (lambda l=l: bench.correct(*bench.fixed_rate(l), l)) for l in range(1, L + 1)}),
    ]
    for r in cfg.single_rates:
        schemes.append(ch.FixedRateScheme(f"Single-Rate {r}-bit", r,
                                          lambda r=r: bench.correct(*bench.fixed_rate(r), r)))
    schemes.append(ch.AdaptiveScheme("ARTOVeQ", nested(bench.variable_rate), L))
    schemes.append(ch.AdaptiveScheme("Progressive ARTOVeQ", nested(bench.progressive), L))
    return schemes


def run_dynamic_table(cfg: ExperimentConfig, bench: Benchmark | None = None) -> DynamicTable:
    """Average accuracy of every scheme under each configured scenario skew."""
    bench = bench or Benchmark(cfg)
    schemes = dynamic_schemes(cfg, bench)
    table = DynamicTable(cfg.dim, cfg.num_segments, cfg.seed, list(cfg.k))
    scale = cfg.capacity_scale or None
    for i, k in enumerate(cfg.k):
        spec = ch.ScenarioSpec(k, cfg.num_segments)
        rng = np.random.default_rng([cfg.seed, 100, i])
        out = ch.simulate_session(schemes, spec, len(bench.test), cfg.steps, rng, cfg.tau_max,
                                  cfg.latency_rule, scale, cfg.max_level)
        for name, acc in out.accuracy.items():
            table.accuracy.setdefault(name, {})[k] = acc
        table.traces[k] = out.trace
    return table
