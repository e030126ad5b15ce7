"""Parameter storage: weights, binary masks, gradients and momentum buffers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from prunelab.errors import ConfigurationError
from prunelab.rng import substream


@dataclass
class Param:
    weight: np.ndarray
    mask: np.ndarray
    grad: np.ndarray
    momentum: np.ndarray
    kind: str = "weight"

    @property
    def decay(self) -> bool:
        return self.kind == "weight"

    def copy(self) -> "Param":
        return Param(self.weight.copy(), self.mask.copy(), self.grad.copy(), self.momentum.copy(), self.kind)


class ParamStore:
    """Ordered mapping of parameter name to :class:`Param`, plus BN running statistics.

    Masks hold 0/1 in the store's float dtype. The forward pass always reads
    ``weight * mask`` so a mask takes effect even before weights are zeroed.
    """

    def __init__(self, dtype=np.float32, arch_name: str = "", seed: int | None = None):
        self.dtype = np.dtype(dtype)
        self.arch_name = arch_name
        self.seed = seed
        self.params: dict[str, Param] = {}
        self.buffers: dict[str, np.ndarray] = {}

    @classmethod
    def initialize(cls, arch, seed: int = 0, dtype=np.float32) -> "ParamStore":
        """Kaiming fan-in normal for conv/linear weights, zero biases, BN gamma=1 beta=0."""
        store = cls(dtype, arch.name, seed)
        rng = substream(seed, "init")
        for spec in arch.param_specs():
            if spec.kind == "weight":
                w = rng.standard_normal(spec.shape) * np.sqrt(2.0 / spec.fan_in)
            elif spec.kind == "bn" and spec.name.endswith(".weight"):
                w = np.ones(spec.shape)
            else:
                w = np.zeros(spec.shape)
            store.add(spec.name, w, spec.kind)
        for name, (shape, fill) in arch.buffer_specs().items():
            store.buffers[name] = np.full(shape, fill, dtype=store.dtype)
        return store

    def add(self, name: str, weight, kind: str = "weight", mask=None):
        w = np.array(weight, dtype=self.dtype)
        m = np.ones_like(w) if mask is None else np.array(mask, dtype=self.dtype)
        if m.shape != w.shape:
            raise ConfigurationError(f"mask shape {m.shape} != weight shape {w.shape} for {name!r}")
        self.params[name] = Param(w, m, np.zeros_like(w), np.zeros_like(w), kind)

    def __getitem__(self, name: str) -> Param:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def effective(self, name: str) -> np.ndarray:
        p = self.params[name]
        return p.weight * p.mask

    def add_grad(self, name: str, g):
        self.params[name].grad += g

    def zero_grad(self):
        for p in self.params.values():
            p.grad.fill(0)

    def mask_grads(self):
        for p in self.params.values():
            p.grad *= p.mask

    def apply_masks(self):
        for p in self.params.values():
            p.weight *= p.mask
            p.momentum *= p.mask

    def copy(self) -> "ParamStore":
        out = ParamStore(self.dtype, self.arch_name, self.seed)
        out.params = {k: p.copy() for k, p in self.params.items()}
        out.buffers = {k: v.copy() for k, v in self.buffers.items()}
        return out

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype, self.arch_name, self.seed)
        for k, p in self.params.items():
            out.params[k] = Param(*(a.astype(dtype) for a in (p.weight, p.mask, p.grad, p.momentum)), p.kind)
        out.buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        return out

    def prunable(self) -> list[str]:
        """Names of conv/linear weight tensors."""
        return [k for k, p in self.params.items() if p.kind == "weight"]

    def sparsity(self, names=None) -> float:
        """Fraction of exactly-zero entries over the given (default: prunable) tensors."""
        names = self.prunable() if names is None else names
        total = sum(self.params[n].weight.size for n in names)
        zeros = sum(int(np.count_nonzero(self.params[n].weight == 0)) for n in names)
        return zeros / total if total else 0.0

    def check_finite(self):
        from prunelab.errors import NumericError

        for k, p in self.params.items():
            if not np.isfinite(p.weight).all():
                raise NumericError(f"non-finite values in parameter {k!r}")
