"""SGD with (Nesterov) momentum and L2 weight decay, mask-respecting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from prunelab.errors import ConfigurationError, NumericError


@dataclass(frozen=True)
class OptimConfig:
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    nesterov: bool = True
    reset_momentum: bool = True

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")


def step(store, cfg: OptimConfig, lr: float):
    """One update of every parameter in ``store`` using its current gradient.

    With ``d = g + wd * w`` (decay only on conv/linear weights)::

        v <- momentum * v + d
        w <- w - lr * (d + momentum * v)   # nesterov
        w <- w - lr * v                    # classical

    Masked entries of both ``w`` and ``v`` are zeroed afterwards.
    """
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be > 0, got {lr}")
    beta = cfg.momentum
    for name, p in store.items():
        d = p.grad + cfg.weight_decay * p.weight if (p.decay and cfg.weight_decay) else p.grad.copy()
        if beta:
            p.momentum *= beta
            p.momentum += d
            update = d + beta * p.momentum if cfg.nesterov else p.momentum
        else:
            update = d
        if not np.isfinite(update).all():
            raise NumericError(f"non-finite update for {name!r}")
        p.weight -= lr * update
        p.weight *= p.mask
        p.momentum *= p.mask
    return store


def reset_state(store):
    """Zero every momentum buffer; weights are untouched."""
    for p in store.params.values():
        p.momentum.fill(0)
    return store
