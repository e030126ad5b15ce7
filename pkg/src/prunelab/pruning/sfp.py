"""Soft filter pruning: zero the weakest filters each epoch and let them regrow."""

from __future__ import annotations

import numpy as np

from prunelab.pruning.masks import _keep_top, round_half_up
from prunelab.pruning.scoring import filter_units, score_filters_l1


def sfp_epoch_hook(store, arch, prune_rate: float, epoch: int | None = None, include_residual: bool = True):
    """Zero the ``round(prune_rate * n)`` lowest-l1 filters of every conv layer.

    Only weights are zeroed; masks and momentum are left alone so the
    filters can recover at the next optimizer step. ``epoch`` is accepted
    for hook-signature compatibility and does not change the result.
    """
    if prune_rate <= 0:
        return store
    units = filter_units(arch, include_residual)
    scores = score_filters_l1(store, arch, units)
    for u in units:
        keep = _keep_top(scores[u.conv], sfp_keep_count(u.out_channels, prune_rate))
        store[u.weight].weight[~keep] = 0
    return store


def sfp_keep_count(n: int, prune_rate: float) -> int:
    """Filters kept out of ``n``: ``n - round(prune_rate * n)``, never below 1."""
    return n - min(round_half_up(prune_rate * n), n - 1)


def zeroed_filters(store, arch, include_residual: bool = True) -> dict[str, np.ndarray]:
    """Boolean vector per conv marking filters whose weights are all zero."""
    out = {}
    for u in filter_units(arch, include_residual):
        w = store[u.weight].weight
        out[u.conv] = ~w.reshape(w.shape[0], -1).any(axis=1)
    return out
