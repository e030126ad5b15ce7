"""Saliency scoring, mask construction, structured shrinking and soft filter pruning."""

from prunelab.pruning.masks import (
    FILTER_METHODS,
    METHODS,
    POLICIES,
    FilterMask,
    PruneSpec,
    WeightMask,
    apply_mask,
    build_mask,
    mask_from_store,
    round_half_up,
)
from prunelab.pruning.scoring import (
    FilterUnit,
    filter_units,
    score_filters_l1,
    score_filters_taylor_fo,
    score_random,
    score_weights_magnitude,
)
from prunelab.pruning.sfp import sfp_epoch_hook, sfp_keep_count, zeroed_filters
from prunelab.pruning.shrink import shrink_structured


def score(store, arch, spec: PruneSpec, batches=None, units=None):
    """Scores for ``spec.method``; ``batches`` is required for Taylor scoring."""
    if spec.method in ("l1_filter", "sfp"):
        return score_filters_l1(store, arch, units)
    if spec.method == "magnitude_global":
        return score_weights_magnitude(store)
    if spec.method == "random_filter":
        return score_random(store, arch, "filter", spec.seed, units)
    if spec.method == "random_weight":
        return score_random(store, arch, "weight", spec.seed)
    return score_filters_taylor_fo(store, arch, batches or [], units)


__all__ = [
    "FILTER_METHODS",
    "METHODS",
    "POLICIES",
    "FilterMask",
    "FilterUnit",
    "PruneSpec",
    "WeightMask",
    "apply_mask",
    "build_mask",
    "filter_units",
    "mask_from_store",
    "round_half_up",
    "score",
    "score_filters_l1",
    "score_filters_taylor_fo",
    "score_random",
    "score_weights_magnitude",
    "sfp_epoch_hook",
    "sfp_keep_count",
    "shrink_structured",
    "zeroed_filters",
]
