"""Whole-network forward/backward and the classification loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from prunelab.errors import ConfigurationError, DataError, NumericError, UsageError


@dataclass
class Cache:
    store_id: int
    arch_name: str
    train: bool
    layer_caches: list


def forward(store, arch, batch, mode: str = "eval"):
    """Run ``batch`` through ``arch`` and return ``(logits, cache)``.

    In ``"train"`` mode batchnorm uses batch statistics and updates its
    running averages; ``"eval"`` mode reads running statistics and mutates
    nothing.
    """
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(batch)
    if x.shape[1:] != arch.input_shape:
        raise ConfigurationError(f"batch sample shape {x.shape[1:]} does not match {arch.name} input {arch.input_shape}")
    x = x.astype(store.dtype, copy=False)
    train = mode == "train"
    caches = []
    for layer in arch.layers:
        x, c = layer.forward(store, x, train)
        caches.append(c)
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite activation after layer {layer.name!r} ({type(layer).__name__})")
    return x, Cache(id(store), arch.name, train, caches)


def backward(store, arch, cache: Cache, loss_grad):
    """Backpropagate ``loss_grad`` (dL/dlogits) and write gradients into ``store``.

    Gradients are overwritten, not accumulated, and gradients of masked
    entries are zero on return.
    """
    if not cache.train:
        raise UsageError("backward requires a cache from a train-mode forward pass")
    if cache.store_id != id(store) or cache.arch_name != arch.name or len(cache.layer_caches) != len(arch.layers):
        raise UsageError("cache was produced by a different store or architecture")
    store.zero_grad()
    d = np.asarray(loss_grad, dtype=store.dtype)
    for layer, c in zip(reversed(arch.layers), reversed(cache.layer_caches)):
        d = layer.backward(store, c, d)
    store.mask_grads()
    return d


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels).astype(np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DataError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return float(max(loss, 0.0)), grad / n


def predict_logits(store, arch, x, batch_size: int = 256):
    """Eval-mode logits for an arbitrarily large input array, in chunks."""
    out = [forward(store, arch, x[i : i + batch_size], "eval")[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, arch.num_classes), dtype=store.dtype)
