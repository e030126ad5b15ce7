"""Learning-rate schedules for original training and for retraining after pruning.

A :class:`Schedule` is an immutable per-step table. Four retraining schedules
derive from an original step schedule:

* ``ft``  -- constant at the original's final learning rate.
* ``lrw`` -- replay of the original's last ``t`` epochs.
* ``slr`` -- cosine warmup, then the original's step shape compressed into
  the remaining epochs (10x drops at 50% and 75%).
* ``clr`` -- 1-cycle: cosine warmup to the peak, cosine anneal to a floor,
  evaluated per optimizer step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from prunelab.errors import ConfigurationError

KINDS = ("step", "ft", "lrw", "slr", "clr")
RETRAIN_KINDS = ("ft", "lrw", "slr", "clr")
_EPS = 1e-9


@dataclass(frozen=True)
class OriginalProfile:
    name: str
    total_epochs: int
    boundaries: tuple[int, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        if len(self.rates) != len(self.boundaries) + 1:
            raise ConfigurationError("a profile needs one more rate than boundaries")
        edges = (0, *self.boundaries, self.total_epochs)
        if any(a > b for a, b in zip(edges, edges[1:])) or self.total_epochs < 0:
            raise ConfigurationError(f"profile boundaries out of order: {edges}")
        if any(r <= 0 for r in self.rates):
            raise ConfigurationError("profile rates must be positive")

    def scaled(self, total_epochs: int) -> "OriginalProfile":
        """Same shape, stretched to ``total_epochs``; boundaries are floored."""
        f = total_epochs / self.total_epochs
        return OriginalProfile(self.name, total_epochs, tuple(int(math.floor(b * f + _EPS)) for b in self.boundaries), self.rates)

    def epoch_rates(self) -> np.ndarray:
        edges = (0, *self.boundaries, self.total_epochs)
        out = np.empty(self.total_epochs)
        for lo, hi, r in zip(edges, edges[1:], self.rates):
            out[lo:hi] = r
        return out


CIFAR = OriginalProfile("cifar", 160, (80, 120), (0.1, 0.01, 0.001))
IMAGENET = OriginalProfile("imagenet", 90, (30, 60), (0.1, 0.01, 0.001))
PROFILES = {"cifar": CIFAR, "imagenet": IMAGENET}


def get_profile(name: str, total_epochs: int | None = None) -> OriginalProfile:
    if name not in PROFILES:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    p = PROFILES[name]
    return p if total_epochs is None or total_epochs == p.total_epochs else p.scaled(total_epochs)


@dataclass(frozen=True, eq=False)
class Schedule:
    kind: str
    budget_epochs: int
    steps_per_epoch: int
    rates: np.ndarray = field(repr=False)
    params: dict = field(default_factory=dict)
    source: str = ""

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=np.float64).copy()
        if r.shape != (self.budget_epochs * self.steps_per_epoch,):
            raise ConfigurationError(
                f"{self.kind}: {r.size} rates for {self.budget_epochs} epochs x {self.steps_per_epoch} steps"
            )
        if r.size and not (r > 0).all():
            raise ConfigurationError(f"{self.kind}: learning rates must be positive")
        r.flags.writeable = False
        object.__setattr__(self, "rates", r)

    @property
    def total_steps(self) -> int:
        return self.rates.size

    def __len__(self):
        return self.total_steps

    def lr(self, step: int) -> float:
        if not 0 <= step < self.total_steps:
            raise IndexError(f"step {step} outside [0, {self.total_steps})")
        return float(self.rates[step])

    def epoch_lr(self, epoch: int) -> float:
        """Rate at the first step of ``epoch``."""
        return self.lr(epoch * self.steps_per_epoch)

    def epoch_rates(self) -> np.ndarray:
        return self.rates[:: self.steps_per_epoch]

    @property
    def max_lr(self) -> float:
        return float(self.rates.max())

    @property
    def min_lr(self) -> float:
        return float(self.rates.min())

    @property
    def final_lr(self) -> float:
        return float(self.rates[-1])

    def __eq__(self, other):
        if not isinstance(other, Schedule):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.budget_epochs == other.budget_epochs
            and self.steps_per_epoch == other.steps_per_epoch
            and np.array_equal(self.rates, other.rates)
        )

    __hash__ = None


def _per_epoch(kind, epoch_rates, spe, params, source):
    epoch_rates = np.asarray(epoch_rates, dtype=np.float64)
    return Schedule(kind, epoch_rates.size, spe, np.repeat(epoch_rates, spe), params, source)


def _spe(original, steps_per_epoch):
    spe = original.steps_per_epoch if steps_per_epoch is None else int(steps_per_epoch)
    if spe < 1:
        raise ConfigurationError(f"steps_per_epoch must be >= 1, got {spe}")
    return spe


def _check_warmup(warmup_frac):
    if not 0 <= warmup_frac < 0.5:
        raise ConfigurationError(f"warmup_frac must lie in [0, 0.5), got {warmup_frac}")


def _cosine_ramp(lo, hi, n):
    """``n`` values rising from ``lo`` (inclusive) towards ``hi`` (exclusive) on a half cosine."""
    i = np.arange(n)
    return lo + (hi - lo) * (1 - np.cos(np.pi * i / n)) / 2 if n else np.empty(0)


def build_original(profile: OriginalProfile, steps_per_epoch: int = 1) -> Schedule:
    if steps_per_epoch < 1:
        raise ConfigurationError(f"steps_per_epoch must be >= 1, got {steps_per_epoch}")
    return _per_epoch("step", profile.epoch_rates(), steps_per_epoch, {"profile": profile.name}, profile.name)


def build_ft(original: Schedule, t: int, steps_per_epoch: int | None = None) -> Schedule:
    if t < 1:
        raise ConfigurationError(f"retraining budget must be >= 1 epoch, got {t}")
    lr = original.final_lr
    return _per_epoch("ft", np.full(t, lr), _spe(original, steps_per_epoch), {"lr": lr}, original.source)


def build_lrw(original: Schedule, t: int, steps_per_epoch: int | None = None) -> Schedule:
    T = original.budget_epochs
    if not 1 <= t <= T:
        raise ConfigurationError(f"rewind budget {t} outside [1, {T}]")
    rates = original.epoch_rates()[T - t :]
    return _per_epoch("lrw", rates, _spe(original, steps_per_epoch), {"rewind_from_epoch": T - t}, original.source)


def build_slr(
    original: Schedule,
    t: int,
    warmup_frac: float = 0.1,
    lr_max: float | None = None,
    steps_per_epoch: int | None = None,
) -> Schedule:
    """Cosine warmup from the original's smallest to largest rate over
    ``floor(warmup_frac * t)`` epochs, then ``lr_max`` dropping 10x at 50% and
    75% of the remaining epochs (both floored)."""
    _check_warmup(warmup_frac)
    if t < 2:
        raise ConfigurationError(f"SLR needs t >= 2, got {t}")
    lo = original.min_lr
    hi = original.max_lr if lr_max is None else float(lr_max)
    w = int(math.floor(warmup_frac * t + _EPS))
    rest = t - w
    d1 = w + int(math.floor(0.5 * rest + _EPS))
    d2 = w + int(math.floor(0.75 * rest + _EPS))
    rates = np.empty(t)
    rates[:w] = _cosine_ramp(lo, hi, w)
    rates[w:d1] = hi
    rates[d1:d2] = hi / 10
    rates[d2:] = hi / 100
    params = {"alpha_init": lo, "alpha_max": hi, "warmup_epochs": w, "drop_points": [d1, d2]}
    return _per_epoch("slr", rates, _spe(original, steps_per_epoch), params, original.source)


def build_clr(
    original: Schedule,
    t: int,
    warmup_frac: float = 0.1,
    lr_max: float | None = None,
    lr_min: float = 1e-5,
    steps_per_epoch: int | None = None,
) -> Schedule:
    """1-cycle schedule evaluated per optimizer step.

    Rises on a half cosine from the original's final rate to ``lr_max`` over
    ``W = floor(warmup_frac * total_steps)`` steps (reaching it at step ``W``),
    then anneals on a half cosine to ``lr_min`` at the last step.
    """
    _check_warmup(warmup_frac)
    if t < 1:
        raise ConfigurationError(f"retraining budget must be >= 1 epoch, got {t}")
    spe = _spe(original, steps_per_epoch)
    a_init = original.final_lr
    a_max = original.max_lr if lr_max is None else float(lr_max)
    a_min = float(lr_min)
    if not 0 < a_min < a_max:
        raise ConfigurationError(f"need 0 < lr_min < lr_max, got {a_min} and {a_max}")
    total = t * spe
    if total < 2:
        raise ConfigurationError("CLR needs at least two optimizer steps")
    w = int(math.floor(warmup_frac * total + _EPS))
    span = total - 1 - w
    rates = np.empty(total)
    rates[:w] = _cosine_ramp(a_init, a_max, w)
    k = np.arange(span + 1)
    rates[w:] = a_min + (a_max - a_min) * (1 + np.cos(np.pi * k / span)) / 2
    rates[w] = a_max
    rates[-1] = a_min
    params = {"alpha_init": a_init, "alpha_max": a_max, "alpha_min": a_min, "warmup_steps": w}
    return Schedule("clr", t, spe, rates, params, original.source)


def build_schedule(kind: str, original: Schedule, t: int, warmup_frac: float = 0.1, lr_max=None, lr_min: float = 1e-5, steps_per_epoch=None) -> Schedule:
    """Dispatch on ``kind``; ``step`` returns the original resized to ``steps_per_epoch``."""
    if kind == "ft":
        return build_ft(original, t, steps_per_epoch)
    if kind == "lrw":
        return build_lrw(original, t, steps_per_epoch)
    if kind == "slr":
        return build_slr(original, t, warmup_frac, lr_max, steps_per_epoch)
    if kind == "clr":
        return build_clr(original, t, warmup_frac, lr_max, lr_min, steps_per_epoch)
    if kind == "step":
        return _per_epoch("step", original.epoch_rates(), _spe(original, steps_per_epoch), original.params, original.source)
    raise ConfigurationError(f"unknown schedule kind {kind!r}; choose from {KINDS}")


def restart_lr_heuristic(original: Schedule, t: int, floor: float | None = None) -> float:
    """Learning rate LRW would use at the first retraining epoch.

    ``floor`` lets callers raise the value for very small budgets, where the
    rewound rate is the tiny final one.
    """
    T = original.budget_epochs
    if not 1 <= t <= T:
        raise ConfigurationError(f"budget {t} outside [1, {T}]")
    lr = original.epoch_lr(T - t)
    return max(lr, floor) if floor is not None else lr


def emit_schedule(schedule: Schedule) -> list[tuple[int, int, float]]:
    """One ``(epoch, step, lr)`` row per optimizer step."""
    spe = schedule.steps_per_epoch
    return [(s // spe, s, float(r)) for s, r in enumerate(schedule.rates)]


def write_schedule_csv(schedule: Schedule, path):
    """Write ``epoch,step,lr`` rows to a path or an open text stream."""
    if hasattr(path, "write"):
        _write_rows(schedule, path)
        return
    with open(path, "w", newline="") as f:
        _write_rows(schedule, f)


def _write_rows(schedule, f):
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["epoch", "step", "lr"])
    for e, s, r in emit_schedule(schedule):
        w.writerow([e, s, repr(r)])
