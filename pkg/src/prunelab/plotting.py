"""Static SVG figures: schedule shapes, accuracy vs budget, accuracy vs sparsity."""

from __future__ import annotations

import statistics
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from prunelab.errors import ConfigurationError  # noqa: E402

PLOT_KINDS = ("schedule", "acc_vs_budget", "acc_vs_sparsity")
_TITLES = {"ft": "Fine-tuning", "lrw": "LR rewinding", "slr": "Scaled LR restarting", "clr": "Cyclic LR restarting", "step": "Original"}


def plot_schedules(schedules, path):
    """One panel per schedule, learning rate against (fractional) epoch."""
    fig, axes = plt.subplots(1, len(schedules), figsize=(3.2 * len(schedules), 2.6), squeeze=False)
    for ax, sch in zip(axes[0], schedules):
        x = [s / sch.steps_per_epoch for s in range(sch.total_steps)]
        ax.plot(x, sch.rates, lw=1.5)
        ax.set_title(_TITLES.get(sch.kind, sch.kind), fontsize=9)
        ax.set_xlabel("epoch")
        ax.set_ylabel("learning rate")
        ax.set_xlim(0, sch.budget_epochs)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    return fig


def _series(records, xkey):
    lines: dict[str, dict] = {}
    for r in records:
        sched = r.meta.get("schedule", "?")
        x = r.meta.get(xkey) if xkey != "sparsity" else round(100 * r.meta.get("ratio", 0.0), 6)
        lines.setdefault(sched, {}).setdefault(x, []).append(100 * r.final["test_acc"])
    return lines


def plot_records(records, kind, path):
    """Mean test accuracy (error bars: sample std) per schedule against budget or sparsity."""
    xkey = "budget_epochs" if kind == "acc_vs_budget" else "sparsity"
    lines = _series(records, xkey)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    xs_all = set()
    for sched in sorted(lines):
        pts = lines[sched]
        xs = sorted(pts)
        xs_all.update(xs)
        means = [statistics.fmean(pts[x]) for x in xs]
        stds = [statistics.stdev(pts[x]) if len(pts[x]) > 1 else 0.0 for x in xs]
        ax.errorbar(xs, means, yerr=stds, marker="o", capsize=3, label=_TITLES.get(sched, sched))
    ax.set_xticks(sorted(xs_all))
    ax.set_xlabel("retraining epochs" if kind == "acc_vs_budget" else "sparsity (%)")
    ax.set_ylabel("test accuracy (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    return fig


def plot(items, kind: str, path):
    """Write one SVG figure and return the matplotlib figure.

    ``items`` are schedules for ``kind="schedule"`` and RunRecords otherwise.
    """
    items = list(items)
    if not items:
        raise ConfigurationError("nothing to plot")
    if kind not in PLOT_KINDS:
        raise ConfigurationError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if kind == "schedule":
        return plot_schedules(items, path)
    return plot_records(items, kind, path)
