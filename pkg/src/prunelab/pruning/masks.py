"""Prune specifications, mask construction and mask installation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from prunelab.errors import ConfigurationError
from prunelab.pruning.scoring import filter_units

METHODS = ("l1_filter", "magnitude_global", "random_filter", "random_weight", "taylor_fo", "sfp")
FILTER_METHODS = ("l1_filter", "random_filter", "taylor_fo", "sfp")
POLICIES = ("uniform_per_block", "per_layer_list", "global")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass(frozen=True)
class PruneSpec:
    method: str = "l1_filter"
    ratio: float = 0.5
    layer_policy: str | None = None
    seed: int = 0
    rounds: int = 1
    per_layer: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown prune method {self.method!r}; choose from {METHODS}")
        if not 0 <= self.ratio < 1:
            raise ConfigurationError(f"prune ratio must lie in [0, 1), got {self.ratio}")
        if self.layer_policy is None:
            object.__setattr__(self, "layer_policy", "uniform_per_block" if self.structured else "global")
        if self.layer_policy not in POLICIES:
            raise ConfigurationError(f"unknown layer policy {self.layer_policy!r}; choose from {POLICIES}")
        if self.layer_policy == "per_layer_list":
            if not self.per_layer:
                raise ConfigurationError("per_layer_list policy needs per_layer ratios")
            if any(not 0 <= r < 1 for r in self.per_layer):
                raise ConfigurationError("per-layer ratios must lie in [0, 1)")
        if self.rounds < 1:
            raise ConfigurationError(f"rounds must be >= 1, got {self.rounds}")

    @property
    def structured(self) -> bool:
        return self.method in FILTER_METHODS

    @property
    def granularity(self) -> str:
        return "filter" if self.structured else "weight"


@dataclass
class FilterMask:
    """Boolean keep-vector over the output filters of each listed conv."""

    keep: dict[str, np.ndarray]
    warnings: list[str] = field(default_factory=list)

    def keep_counts(self) -> dict[str, int]:
        return {k: int(v.sum()) for k, v in self.keep.items()}

    @classmethod
    def identity(cls, arch, include_residual=False):
        return cls({u.conv: np.ones(u.out_channels, bool) for u in filter_units(arch, include_residual)})


@dataclass
class WeightMask:
    """Boolean keep-array per weight tensor."""

    keep: dict[str, np.ndarray]
    warnings: list[str] = field(default_factory=list)

    def keep_counts(self) -> dict[str, int]:
        return {k: int(v.sum()) for k, v in self.keep.items()}

    def sparsity(self) -> float:
        total = sum(v.size for v in self.keep.values())
        return 1 - sum(int(v.sum()) for v in self.keep.values()) / total


def _keep_top(scores: np.ndarray, k: int) -> np.ndarray:
    """Keep the ``k`` highest scores; among ties the lower index is kept."""
    flat = scores.ravel()
    order = np.lexsort((np.arange(flat.size), -flat))
    keep = np.zeros(flat.size, bool)
    keep[order[:k]] = True
    return keep.reshape(scores.shape)


def _prepared(scores, previous):
    out = {}
    for name, s in scores.items():
        s = np.asarray(s, dtype=np.float64).copy()
        if previous is not None and name in previous.keep:
            s[~previous.keep[name]] = -np.inf
        out[name] = s
    return out


def build_mask(scores: dict, spec: PruneSpec, arch=None, keep_counts: dict | None = None, previous=None):
    """Turn saliency scores into a keep-mask.

    The lowest-scoring units are removed. Per-layer keep counts follow the
    policy (``round((1 - ratio) * n)`` under ``uniform_per_block``) unless
    ``keep_counts`` is given, which is how random masks copy the structure of
    a methodical one. Units removed in ``previous`` stay removed.
    """
    scores = _prepared(scores, previous)
    names = list(scores)
    warnings = []
    if keep_counts is not None:
        missing = set(names) ^ set(keep_counts)
        if missing:
            raise ConfigurationError(f"keep_counts and scores disagree on {sorted(missing)}")
        counts = {n: int(keep_counts[n]) for n in names}
    elif spec.layer_policy == "uniform_per_block":
        counts = {n: round_half_up((1 - spec.ratio) * scores[n].size) for n in names}
    elif spec.layer_policy == "per_layer_list":
        if len(spec.per_layer) != len(names):
            raise ConfigurationError(f"per_layer has {len(spec.per_layer)} ratios for {len(names)} layers")
        counts = {n: round_half_up((1 - r) * scores[n].size) for n, r in zip(names, spec.per_layer)}
    else:
        counts = _global_counts(scores, names, spec.ratio, spec.structured, warnings)
    keep = {}
    for n in names:
        k = counts[n]
        if spec.structured and k < 1:
            warnings.append(f"{n}: keep count {k} clamped to 1")
            k = 1
        keep[n] = _keep_top(scores[n], k)
    cls = FilterMask if spec.structured else WeightMask
    return cls(keep, warnings)


def _global_counts(scores, names, ratio, structured, warnings):
    sizes = [scores[n].size for n in names]
    flat = np.concatenate([scores[n].ravel() for n in names])
    total = flat.size
    n_keep = total - round_half_up(ratio * total)
    keep = _keep_top(flat, n_keep)
    counts, start = {}, 0
    for n, size in zip(names, sizes):
        counts[n] = int(keep[start : start + size].sum())
        start += size
    if structured:
        # a layer emptied by the global threshold keeps its best filter instead
        for n in names:
            if counts[n] == 0:
                warnings.append(f"{n}: global threshold removed every filter; keeping 1")
                counts[n] = 1
    return counts


def apply_mask(store, mask, arch=None):
    """Install ``mask`` into ``store`` and zero the masked weights and momentum.

    New masks intersect existing ones. For a :class:`FilterMask` the removed
    filters' conv rows, batchnorm gamma/beta and running statistics, and the
    consumer's matching input channels are all zeroed.
    """
    if isinstance(mask, WeightMask):
        for name, keep in mask.keep.items():
            p = store[name]
            if keep.shape != p.weight.shape:
                raise ConfigurationError(f"mask for {name!r} has shape {keep.shape}, weight has {p.weight.shape}")
            p.mask *= keep
            p.weight *= p.mask
            p.momentum *= p.mask
        return store
    if arch is None:
        raise ConfigurationError("filter masks need the architecture")
    units = {u.conv: u for u in filter_units(arch, include_residual=True)}
    for conv, keep in mask.keep.items():
        if conv not in units:
            raise ConfigurationError(f"{conv!r} is not a filter-prunable conv of {arch.name}")
        u = units[conv]
        if keep.shape != (u.out_channels,):
            raise ConfigurationError(f"mask for {conv!r} has {keep.shape[0]} entries, layer has {u.out_channels} filters")
        removed = ~keep
        if not removed.any():
            continue
        _zero(store, u.weight, (removed,))
        _zero(store, f"{conv}.bias", (removed,))
        if u.bn is not None:
            for suffix in ("weight", "bias"):
                _zero(store, f"{u.bn}.{suffix}", (removed,))
            for suffix in ("running_mean", "running_var"):
                store.buffers[f"{u.bn}.{suffix}"][removed] = 0
        if u.consumer is not None:
            cp = store[f"{u.consumer}.weight"]
            if cp.weight.ndim == 4:
                _zero(store, f"{u.consumer}.weight", (slice(None), removed))
            else:
                cols = np.repeat(removed, u.spatial)
                _zero(store, f"{u.consumer}.weight", (slice(None), cols))
    return store


def _zero(store, name, index):
    if name not in store.params:
        return
    p = store[name]
    p.mask[index] = 0
    p.weight *= p.mask
    p.momentum *= p.mask


def mask_from_store(store, arch, include_residual=False) -> FilterMask:
    """Filter mask marking every filter whose installed mask row is all zero."""
    keep = {}
    for u in filter_units(arch, include_residual):
        m = store[u.weight].mask
        keep[u.conv] = m.reshape(m.shape[0], -1).any(axis=1)
    return FilterMask(keep)
