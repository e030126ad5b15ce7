"""Saliency scores for filters and individual weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from prunelab.errors import ConfigurationError, DataError
from prunelab.nn.layers import BasicBlock, BatchNorm, Conv2d, Flatten, GlobalAvgPool, Linear
from prunelab.nn.network import backward, cross_entropy, forward
from prunelab.rng import substream


@dataclass(frozen=True)
class FilterUnit:
    """One conv layer whose output filters can be removed.

    ``consumer`` is the conv/linear layer reading those channels, or ``None``
    when they feed a residual addition (the channels can then be zeroed but
    not physically removed). For a linear consumer after a flatten, channel
    ``c`` owns input columns ``[c * spatial, (c + 1) * spatial)``.
    """

    conv: str
    out_channels: int
    bn: str | None
    consumer: str | None
    spatial: int = 1
    block: str | None = None

    @property
    def weight(self) -> str:
        return f"{self.conv}.weight"


def filter_units(arch, include_residual: bool = False) -> list[FilterUnit]:
    """Filter-prunable conv layers in network order.

    By default only convs whose outputs feed another conv/linear directly are
    returned: the first conv of every residual block and every conv of a
    plain stack. ``include_residual=True`` adds the convs feeding residual
    additions (stem convs and second block convs).
    """
    layers, shapes = arch.layers, arch.shapes
    units = []
    for i, layer in enumerate(layers):
        if isinstance(layer, BasicBlock):
            units.append(FilterUnit(layer.conv1.name, layer.mid_channels, layer.bn1.name, layer.conv2.name, 1, layer.name))
            if include_residual:
                units.append(FilterUnit(layer.conv2.name, layer.out_channels, layer.bn2.name, None, 1, layer.name))
            continue
        if not isinstance(layer, Conv2d):
            continue
        bn, consumer, spatial = None, None, 1
        for j in range(i + 1, len(layers)):
            nxt = layers[j]
            if isinstance(nxt, BatchNorm) and bn is None:
                bn = nxt.name
            elif isinstance(nxt, Flatten):
                spatial = int(np.prod(shapes[j][1:]))
            elif isinstance(nxt, GlobalAvgPool):
                spatial = 1
            elif isinstance(nxt, (Conv2d, Linear)):
                consumer = nxt.name
                break
            elif isinstance(nxt, BasicBlock):
                break
        if consumer is not None or include_residual:
            units.append(FilterUnit(layer.name, layer.out_channels, bn, consumer, spatial))
    return units


def _units(arch, units):
    units = filter_units(arch) if units is None else units
    if not units:
        raise ConfigurationError(f"{arch.name} has no filter-prunable conv layers")
    return units


def score_filters_l1(store, arch, units=None) -> dict[str, np.ndarray]:
    """Sum of absolute kernel weights of every output filter, keyed by conv name."""
    out = {}
    for u in _units(arch, units):
        w = store.effective(u.weight)
        out[u.conv] = np.abs(w).reshape(w.shape[0], -1).sum(axis=1).astype(np.float64)
    return out


def score_weights_magnitude(store, names=None) -> dict[str, np.ndarray]:
    """``|w|`` for every prunable conv/linear weight tensor."""
    names = store.prunable() if names is None else names
    return {n: np.abs(store.effective(n)).astype(np.float64) for n in names}


def score_random(store, arch=None, granularity: str = "filter", seed: int = 0, units=None, names=None) -> dict[str, np.ndarray]:
    """I.i.d. uniform(0, 1) scores with the same keys and shapes as the methodical scorers."""
    rng = substream(seed, f"prune:random:{granularity}")
    if granularity == "filter":
        return {u.conv: rng.random(u.out_channels) for u in _units(arch, units)}
    if granularity == "weight":
        names = store.prunable() if names is None else names
        return {n: rng.random(store[n].weight.shape) for n in names}
    raise ConfigurationError(f"granularity must be 'filter' or 'weight', got {granularity!r}")


def score_filters_taylor_fo(store, arch, batches, units=None) -> dict[str, np.ndarray]:
    """First-order Taylor importance per filter.

    For each batch the filter term is ``(sum over the filter of grad * w) ** 2``;
    terms are averaged over batches. Gradients come from a train-mode pass on a
    private copy so the caller's batchnorm statistics are not touched.
    """
    units = _units(arch, units)
    work = store.copy()
    acc = {u.conv: np.zeros(u.out_channels) for u in units}
    count = 0
    for xb, yb in batches:
        logits, cache = forward(work, arch, xb, "train")
        _, g = cross_entropy(logits, yb)
        backward(work, arch, cache, g)
        for u in units:
            p = work[u.weight]
            contrib = (p.grad * p.weight * p.mask).reshape(p.weight.shape[0], -1).sum(axis=1).astype(np.float64)
            acc[u.conv] += contrib**2
        count += 1
    if count == 0:
        raise DataError("Taylor scoring needs at least one batch")
    return {k: v / count for k, v in acc.items()}
