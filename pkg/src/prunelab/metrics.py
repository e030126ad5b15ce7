"""Parameter/FLOPs counting, accuracy, and mask-quality functionals."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from prunelab.errors import DataError
from prunelab.nn.layers import BasicBlock, BatchNorm, Conv2d, Linear
from prunelab.nn.network import cross_entropy, predict_logits
from prunelab.rng import substream

CONVENTION = "flops=2*macs"


@dataclass
class ModelCost:
    params: int
    macs: int
    per_layer: list[dict] = field(default_factory=list)
    convention: str = CONVENTION

    @property
    def flops(self) -> int:
        return 2 * self.macs

    def to_dict(self) -> dict:
        return {
            "params": self.params,
            "macs": self.macs,
            "flops": self.flops,
            "per_layer": self.per_layer,
            "convention": self.convention,
        }


def _nnz(store, name, full):
    if store is None or name not in store.params:
        return full
    return int(np.count_nonzero(store[name].mask))


def _layer_rows(layer, shape, store):
    if isinstance(layer, BasicBlock):
        rows, s = [], shape
        for sub in layer.sublayers():
            rows += _layer_rows(sub, s, store)
            s = sub.out_shape(s)
        return rows
    out = layer.out_shape(shape)
    row = {"name": layer.name, "type": type(layer).__name__, "params": 0, "macs": 0, "elementwise": 0}
    if isinstance(layer, Conv2d):
        k = layer.kernel_size
        w = _nnz(store, f"{layer.name}.weight", layer.out_channels * layer.in_channels * k * k)
        b = _nnz(store, f"{layer.name}.bias", layer.out_channels) if layer.bias else 0
        row.update(params=w + b, macs=w * out[1] * out[2])
    elif isinstance(layer, Linear):
        w = _nnz(store, f"{layer.name}.weight", layer.in_features * layer.out_features)
        b = _nnz(store, f"{layer.name}.bias", layer.out_features) if layer.bias else 0
        row.update(params=w + b, macs=w)
    elif isinstance(layer, BatchNorm):
        c = layer.num_features
        p = _nnz(store, f"{layer.name}.weight", c) + _nnz(store, f"{layer.name}.bias", c)
        row.update(params=p, elementwise=int(np.prod(shape)))
    else:
        row["elementwise"] = int(np.prod(shape))
    return [row]


def count_cost(arch, store=None) -> ModelCost:
    """Parameters and multiply-accumulates of ``arch``.

    conv MACs = Cin * K^2 * Cout * Hout * Wout, linear MACs = in * out;
    batchnorm/activation/pooling contribute 0 MACs and are listed as
    elementwise ops. Passing a ``store`` counts only unmasked entries, which
    equals the cost of the physically shrunk network for structured masks.
    """
    rows, shape = [], arch.input_shape
    for layer in arch.layers:
        rows += _layer_rows(layer, shape, store)
        shape = layer.out_shape(shape)
    return ModelCost(sum(r["params"] for r in rows), sum(r["macs"] for r in rows), rows)


def reduction(unpruned: ModelCost, pruned: ModelCost) -> tuple[float, float]:
    """Percentage drop in (params, FLOPs)."""
    if pruned.params > unpruned.params or pruned.macs > unpruned.macs:
        warnings.warn("pruned model is larger than the unpruned one; reporting a negative drop", stacklevel=2)
    p = 100.0 * (1 - pruned.params / unpruned.params) if unpruned.params else 0.0
    f = 100.0 * (1 - pruned.macs / unpruned.macs) if unpruned.macs else 0.0
    return p, f


def _xy(data, dtype):
    if hasattr(data, "normalize"):
        return data.normalize(dtype=dtype), np.asarray(data.y, dtype=np.int64)
    x, y = data
    return np.asarray(x), np.asarray(y, dtype=np.int64)


def accuracy(store, arch, data, batch_size: int = 256) -> float:
    """Top-1 accuracy in eval mode. ``data`` is a Dataset or an ``(x, y)`` pair."""
    x, y = _xy(data, store.dtype)
    if len(y) == 0:
        raise DataError("cannot compute accuracy on an empty split")
    logits = predict_logits(store, arch, x, batch_size)
    return float(np.mean(logits.argmax(axis=1) == y))


def mean_loss(store, arch, data, batch_size: int = 256) -> float:
    x, y = _xy(data, store.dtype)
    logits = predict_logits(store, arch, x, batch_size)
    return cross_entropy(logits.astype(np.float64), y)[0]


def evaluation_subset(data, max_samples: int = 1000, seed: int = 0):
    """Fixed random subset of at most ``max_samples`` records (the whole set if smaller)."""
    x, y = data if isinstance(data, tuple) else (data, None)
    n = len(x) if y is not None else len(data)
    if n <= max_samples:
        return data
    idx = np.sort(substream(seed, "eval-subset").choice(n, max_samples, replace=False))
    if y is not None:
        return x[idx], y[idx]
    return data.subset(idx)


def _masked(store, arch, mask):
    from prunelab.pruning.masks import apply_mask

    return apply_mask(store.copy(), mask, arch)


def mask_loss_gap(store, arch, mask, data) -> float:
    """Loss of the masked network minus loss of the unmasked one (eval mode)."""
    masked = _masked(store, arch, mask)
    return mean_loss(masked, arch, data) - mean_loss(store, arch, data)


def output_gap(store, arch, mask, data) -> float:
    """Mean over samples of the squared L2 distance between masked and unmasked logits."""
    x, _ = _xy(data, store.dtype)
    masked = _masked(store, arch, mask)
    diff = predict_logits(masked, arch, x).astype(np.float64) - predict_logits(store, arch, x).astype(np.float64)
    return float(np.mean(np.sum(diff * diff, axis=1)))
