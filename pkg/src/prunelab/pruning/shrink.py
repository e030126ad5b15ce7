"""Physical removal of pruned filters."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from prunelab.errors import PolicyError, UsageError
from prunelab.nn.arch import Architecture
from prunelab.nn.layers import BasicBlock, BatchNorm, Conv2d, Linear
from prunelab.nn.store import ParamStore
from prunelab.pruning.scoring import filter_units


def shrink_structured(store: ParamStore, arch: Architecture, mask) -> tuple[ParamStore, Architecture]:
    """Delete removed output channels and the consumers' matching input channels.

    The removed filters must already be zeroed, batchnorm included (see
    :func:`~prunelab.pruning.masks.apply_mask`); the smaller network then
    computes the same function.
    """
    units = {u.conv: u for u in filter_units(arch, include_residual=True)}
    out_keep: dict[str, np.ndarray] = {}
    in_keep: dict[str, np.ndarray] = {}
    for conv, keep in mask.keep.items():
        keep = np.asarray(keep, bool)
        if keep.all():
            continue
        u = units.get(conv)
        if u is None or u.consumer is None:
            raise PolicyError(f"cannot remove filters of {conv!r}: its output feeds a residual addition")
        w = store.effective(u.weight)
        if np.any(w[~keep]):
            raise UsageError(f"{conv!r}: removed filters are not zeroed; apply the mask first")
        if u.bn is not None and (np.any(store.effective(f"{u.bn}.weight")[~keep]) or np.any(store.effective(f"{u.bn}.bias")[~keep])):
            raise UsageError(f"{u.bn!r}: batchnorm channels of removed filters are not zeroed")
        out_keep[conv] = keep
        if u.bn is not None:
            out_keep[u.bn] = keep
        in_keep[u.consumer] = np.repeat(keep, u.spatial)

    def resize(layer):
        if isinstance(layer, BasicBlock):
            if layer.conv1.name in out_keep:
                return replace(layer, mid_channels=int(out_keep[layer.conv1.name].sum()))
            return layer
        if isinstance(layer, Conv2d):
            kw = {}
            if layer.name in out_keep:
                kw["out_channels"] = int(out_keep[layer.name].sum())
            if layer.name in in_keep:
                kw["in_channels"] = int(in_keep[layer.name].sum())
            return replace(layer, **kw) if kw else layer
        if isinstance(layer, BatchNorm) and layer.name in out_keep:
            return replace(layer, num_features=int(out_keep[layer.name].sum()))
        if isinstance(layer, Linear) and layer.name in in_keep:
            return replace(layer, in_features=int(in_keep[layer.name].sum()))
        return layer

    name = arch.name if arch.name.endswith("-pruned") or not out_keep else f"{arch.name}-pruned"
    new_arch = Architecture(name, arch.input_shape, arch.num_classes, tuple(resize(layer) for layer in arch.layers))

    new = ParamStore(store.dtype, name, store.seed)
    for pname, p in store.items():
        layer_name, _, suffix = pname.rpartition(".")
        idx = [slice(None)] * p.weight.ndim
        if layer_name in out_keep:
            idx[0] = out_keep[layer_name]
        if layer_name in in_keep and suffix == "weight":
            idx[1] = in_keep[layer_name]
        sel = _select(p.weight, idx)
        new.add(pname, sel, p.kind, _select(p.mask, idx))
        new.params[pname].momentum[...] = _select(p.momentum, idx)
    for bname, buf in store.buffers.items():
        layer_name = bname.rpartition(".")[0]
        new.buffers[bname] = buf[out_keep[layer_name]].copy() if layer_name in out_keep else buf.copy()
    return new, new_arch


def _select(a, idx):
    # apply boolean selections one axis at a time so they do not broadcast together
    out = a
    for axis, ix in enumerate(idx):
        if not isinstance(ix, slice):
            out = np.compress(ix, out, axis=axis)
    return out.copy()
