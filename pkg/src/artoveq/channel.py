"""Time-varying bit pipe, latency-constrained level selection and scenario draws.

Two latency rules are available for deciding how many bits per segment fit
within ``tau_max``:

``eq4``
    level ``l`` is feasible when ``l / (M * C_t) <= tau_max`` (the selection
    rule as usually stated for this scheme).
``consistent``
    level ``l`` is feasible when the whole payload ``M * l`` bits fits,
    ``M * l / C_t <= tau_max``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

LATENCY_RULES = ("eq4", "consistent")
SUPPORT = np.arange(1, 9)

# relative slack when comparing a latency against its bound, so that a
# capacity derived from a budget admits exactly that budget
_REL_TOL = 1e-12


class ChannelInfeasible(RuntimeError):
    """No quantization level meets the latency bound; transmission must wait."""


def latency(level: int, num_segments: int, capacity: float, rule: str = "eq4") -> float:
    if rule == "eq4":
        return level / (num_segments * capacity)
    if rule == "consistent":
        return num_segments * level / capacity
    raise ValueError(f"unknown latency rule {rule!r}; expected one of {LATENCY_RULES}")


def within_bound(value: float, tau_max: float) -> bool:
    return value <= tau_max * (1.0 + _REL_TOL)


def select_level(capacity: float, num_segments: int, tau_max: float, max_level: int,
                 rule: str = "eq4", min_capacity: float | None = None) -> int:
    """Largest level in ``1..max_level`` whose latency stays within ``tau_max``."""
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    if min_capacity is not None and tau_max < 1.0 / min_capacity:
        raise ValueError(f"tau_max={tau_max} below 1/C_min={1.0 / min_capacity}")
    best = 0
    for level in range(1, max_level + 1):
        if within_bound(latency(level, num_segments, capacity, rule), tau_max):
            best = level
        else:
            break
    if best == 0:
        raise ChannelInfeasible(
            f"level 1 needs {latency(1, num_segments, capacity, rule):.6g} > tau_max={tau_max:.6g}"
        )
    return best


def capacity_for_level(level: int, num_segments: int, tau_max: float, rule: str = "eq4") -> float:
    """Capacity at which ``level`` is exactly the largest feasible level."""
    if rule == "eq4":
        return level / (num_segments * tau_max)
    if rule == "consistent":
        return num_segments * level / tau_max
    raise ValueError(f"unknown latency rule {rule!r}")


@dataclass
class ScenarioSpec:
    k: float = 0.0
    num_segments: int = 4
    support: np.ndarray = field(default_factory=lambda: SUPPORT.copy())

    def probabilities(self) -> np.ndarray:
        logits = self.k * self.support.astype(np.float64)
        w = np.exp(logits - logits.max())
        return w / w.sum()


SCENARIOS = {"S1": 0.0, "S2": -0.25, "S3": 0.25}


def draw_budget(spec: ScenarioSpec, rng: np.random.Generator) -> tuple[int, int]:
    """Per-segment bits ``b`` and total budget ``M * b`` for one coherence interval."""
    b = int(rng.choice(spec.support, p=spec.probabilities()))
    return b, spec.num_segments * b


def draw_budgets(spec: ScenarioSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.choice(spec.support, size=n, p=spec.probabilities())


@dataclass
class ChannelState:
    capacity: float
    coherence: float = 1.0
    min_capacity: float = 1e-9

    def __post_init__(self):
        if self.capacity < self.min_capacity:
            raise ValueError(f"capacity {self.capacity} below C_min {self.min_capacity}")


@dataclass
class TraceRecord:
    t: int
    capacity: float
    budget: int
    level: int
    latency: float
    scheme: str
    correct: int
    delivered: bool


@dataclass
class ChannelTrace:
    k: float
    records: list[TraceRecord] = field(default_factory=list)

    def for_scheme(self, name: str) -> list[TraceRecord]:
        return [r for r in self.records if r.scheme == name]

    def rows(self):
        for r in self.records:
            yield (r.t, r.capacity, r.budget, r.level, r.latency, r.scheme, r.correct)


class InferenceScheme(Protocol):
    name: str

    def correct_at(self, level: int) -> int:
        """Correct predictions on the evaluation set when quantized at ``level``."""


@dataclass
class AdaptiveScheme:
    """Single model whose per-segment resolution follows the channel."""

    name: str
    correct_fn: Callable[[int], int]
    max_level: int = 8
    _cache: dict = field(default_factory=dict, repr=False)

    def correct_at(self, level: int) -> int:
        if level not in self._cache:
            self._cache[level] = self.correct_fn(level)
        return self._cache[level]


@dataclass
class FixedRateScheme:
    """Model locked to ``rate`` bits per segment; fails whenever the channel can't carry it."""

    name: str
    rate: int
    correct_fn: Callable[[], int]
    _cache: int | None = field(default=None, repr=False)

    def correct_at(self, level: int) -> int:
        if self._cache is None:
            self._cache = self.correct_fn()
        return self._cache


@dataclass
class MultiFixedScheme:
    """One dedicated fixed-rate model per level; picks the one matching the channel."""

    name: str
    per_level: dict[int, Callable[[], int]]
    _cache: dict = field(default_factory=dict, repr=False)

    def correct_at(self, level: int) -> int:
        if level not in self._cache:
            self._cache[level] = self.per_level[level]()
        return self._cache[level]


@dataclass
class SessionResult:
    accuracy: dict[str, float]
    trace: ChannelTrace
    eval_size: int


def simulate_session(schemes, spec: ScenarioSpec, eval_size: int, steps: int, rng: np.random.Generator,
                     tau_max: float = 1.0, rule: str = "eq4", capacity_scale: float | None = None,
                     max_level: int = 8) -> SessionResult:
    """Run ``steps`` coherence intervals and score every scheme on each.

    Each interval draws a per-segment budget ``b``. With ``capacity_scale``
    unset the capacity is the one at which exactly ``b`` bits per segment fit
    within ``tau_max`` under ``rule``; otherwise ``C_t = capacity_scale * b``.
    Adaptive schemes quantize at the selected level; fixed-rate schemes score
    zero on intervals whose latency bound their rate violates. Every interval
    evaluates the whole evaluation set (``eval_size`` samples).
    """
    M = spec.num_segments
    trace = ChannelTrace(spec.k)
    correct = {s.name: 0 for s in schemes}
    for t in range(steps):
        b, budget = draw_budget(spec, rng)
        if capacity_scale is None:
            capacity = capacity_for_level(b, M, tau_max, rule)
        else:
            capacity = capacity_scale * b
        try:
            level = select_level(capacity, M, tau_max, max_level, rule)
        except ChannelInfeasible:
            level = 0
        for s in schemes:
            if isinstance(s, FixedRateScheme):
                use = s.rate
                delivered = within_bound(latency(use, M, capacity, rule), tau_max)
            else:
                use = level
                delivered = level > 0
            hits = s.correct_at(use) if delivered else 0
            lat = latency(use, M, capacity, rule) if use > 0 else math.inf
            trace.records.append(TraceRecord(t, capacity, budget, use, lat, s.name, hits, delivered))
            correct[s.name] += hits
    accuracy = {name: c / (steps * eval_size) for name, c in correct.items()}
    return SessionResult(accuracy, trace, eval_size)
