"""Layer descriptors with explicit forward/backward kernels.

Layers are immutable descriptions; all trainable state lives in a
:class:`~prunelab.nn.store.ParamStore` keyed by ``"<layer name>.<param>"``.
Every array is NCHW (images) or NC (vectors).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from prunelab.errors import ConfigurationError

# param kinds: "weight" is prunable and weight-decayed; "bias" and "bn" are neither.


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    kind: str
    fan_in: int = 0


class Layer:
    """Base class. Parameter-free layers only override the kernels."""

    name: str

    def params(self) -> list[ParamSpec]:
        return []

    def buffers(self) -> dict[str, tuple[tuple[int, ...], float]]:
        return {}

    def out_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def walk(self) -> Iterator["Layer"]:
        yield self

    def forward(self, store, x, train):
        raise NotImplementedError

    def backward(self, store, cache, dy):
        raise NotImplementedError

    def to_dict(self) -> dict:
        d = {"type": type(self).__name__}
        d.update(self.__dict__)
        return d


def _check_ndim(layer, shape, ndim):
    if len(shape) != ndim:
        raise ConfigurationError(
            f"{type(layer).__name__} {layer.name!r} expects {ndim}-d samples, got shape {shape}"
        )


@dataclass(frozen=True)
class Conv2d(Layer):
    name: str
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    bias: bool = False

    def params(self):
        k = self.kernel_size
        fan_in = self.in_channels * k * k
        ps = [ParamSpec(f"{self.name}.weight", (self.out_channels, self.in_channels, k, k), "weight", fan_in)]
        if self.bias:
            ps.append(ParamSpec(f"{self.name}.bias", (self.out_channels,), "bias", fan_in))
        return ps

    def out_shape(self, shape):
        _check_ndim(self, shape, 3)
        c, h, w = shape
        if c != self.in_channels:
            raise ConfigurationError(f"conv {self.name!r}: expected {self.in_channels} channels, got {c}")
        k, s, p = self.kernel_size, self.stride, self.padding
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1:
            raise ConfigurationError(f"conv {self.name!r}: input {h}x{w} too small")
        return (self.out_channels, ho, wo)

    def forward(self, store, x, train):
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ConfigurationError(f"conv {self.name!r}: expected {self.in_channels} channels, got {c}")
        k, s, p = self.kernel_size, self.stride, self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        ho, wo = win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        wmat = store.effective(f"{self.name}.weight").reshape(self.out_channels, -1)
        out = cols @ wmat.T
        if self.bias:
            out += store.effective(f"{self.name}.bias")
        y = out.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        cache = (cols, xp.shape, ho, wo) if train else None
        return np.ascontiguousarray(y), cache

    def backward(self, store, cache, dy):
        cols, xp_shape, ho, wo = cache
        n, c, hp, wp = xp_shape
        k, s, p = self.kernel_size, self.stride, self.padding
        dmat = dy.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        wname = f"{self.name}.weight"
        store.add_grad(wname, (dmat.T @ cols).reshape(store.params[wname].weight.shape))
        if self.bias:
            store.add_grad(f"{self.name}.bias", dmat.sum(axis=0))
        wmat = store.effective(wname).reshape(self.out_channels, -1)
        dcols = (dmat @ wmat).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            dxp = dxp[:, :, p : hp - p, p : wp - p]
        return dxp


@dataclass(frozen=True)
class BatchNorm(Layer):
    """Batch normalization over the channel axis of 2-d or 4-d inputs."""

    name: str
    num_features: int
    eps: float = 1e-5
    momentum: float = 0.1

    def params(self):
        c = self.num_features
        return [ParamSpec(f"{self.name}.weight", (c,), "bn"), ParamSpec(f"{self.name}.bias", (c,), "bn")]

    def buffers(self):
        c = self.num_features
        return {f"{self.name}.running_mean": ((c,), 0.0), f"{self.name}.running_var": ((c,), 1.0)}

    def out_shape(self, shape):
        if shape[0] != self.num_features:
            raise ConfigurationError(f"batchnorm {self.name!r}: expected {self.num_features} channels, got {shape[0]}")
        return shape

    def _view(self, v, ndim):
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, store, x, train):
        if x.shape[1] != self.num_features:
            raise ConfigurationError(f"batchnorm {self.name!r}: expected {self.num_features} channels, got {x.shape[1]}")
        axes = (0,) if x.ndim == 2 else (0, 2, 3)
        gamma = self._view(store.effective(f"{self.name}.weight"), x.ndim)
        beta = self._view(store.effective(f"{self.name}.bias"), x.ndim)
        rm = store.buffers[f"{self.name}.running_mean"]
        rv = store.buffers[f"{self.name}.running_var"]
        if not train:
            inv = 1.0 / np.sqrt(self._view(rv, x.ndim) + self.eps)
            return (x - self._view(rm, x.ndim)) * inv * gamma + beta, None
        count = x.size // x.shape[1]
        mean = x.mean(axis=axes)
        xc = x - self._view(mean, x.ndim)
        var = (xc * xc).mean(axis=axes)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * self._view(inv, x.ndim)
        m = self.momentum
        rm *= 1 - m
        rm += m * mean
        rv *= 1 - m
        rv += m * var * (count / max(count - 1, 1))
        return xhat * gamma + beta, (xhat, inv, count, axes)

    def backward(self, store, cache, dy):
        xhat, inv, count, axes = cache
        ndim = dy.ndim
        dbeta = dy.sum(axis=axes)
        dgamma = (dy * xhat).sum(axis=axes)
        store.add_grad(f"{self.name}.weight", dgamma)
        store.add_grad(f"{self.name}.bias", dbeta)
        gamma = store.effective(f"{self.name}.weight")
        scale = self._view(gamma * inv / count, ndim)
        return scale * (count * dy - self._view(dbeta, ndim) - xhat * self._view(dgamma, ndim))


@dataclass(frozen=True)
class ReLU(Layer):
    name: str = "relu"

    def forward(self, store, x, train):
        pos = x > 0
        return x * pos, (pos if train else None)

    def backward(self, store, cache, dy):
        return dy * cache


@dataclass(frozen=True)
class MaxPool2d(Layer):
    name: str = "maxpool"
    kernel_size: int = 2

    def out_shape(self, shape):
        _check_ndim(self, shape, 3)
        c, h, w = shape
        k = self.kernel_size
        if h % k or w % k:
            raise ConfigurationError(f"maxpool: {h}x{w} not divisible by {k}")
        return (c, h // k, w // k)

    def forward(self, store, x, train):
        n, c, h, w = x.shape
        k = self.kernel_size
        blocks = x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // k, w // k, k * k)
        idx = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return y, ((idx, x.shape) if train else None)

    def backward(self, store, cache, dy):
        idx, shape = cache
        n, c, h, w = shape
        k = self.kernel_size
        blocks = np.zeros((n, c, h // k, w // k, k * k), dtype=dy.dtype)
        np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=-1)
        return blocks.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


@dataclass(frozen=True)
class GlobalAvgPool(Layer):
    """Average over all spatial positions, producing (N, C)."""

    name: str = "avgpool"

    def out_shape(self, shape):
        _check_ndim(self, shape, 3)
        return (shape[0],)

    def forward(self, store, x, train):
        return x.mean(axis=(2, 3)), (x.shape if train else None)

    def backward(self, store, cache, dy):
        n, c, h, w = cache
        return np.broadcast_to(dy[:, :, None, None] / (h * w), cache).copy()


@dataclass(frozen=True)
class Flatten(Layer):
    name: str = "flatten"

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, store, x, train):
        return x.reshape(x.shape[0], -1), (x.shape if train else None)

    def backward(self, store, cache, dy):
        return dy.reshape(cache)


@dataclass(frozen=True)
class Linear(Layer):
    name: str
    in_features: int
    out_features: int
    bias: bool = True

    def params(self):
        ps = [ParamSpec(f"{self.name}.weight", (self.out_features, self.in_features), "weight", self.in_features)]
        if self.bias:
            ps.append(ParamSpec(f"{self.name}.bias", (self.out_features,), "bias", self.in_features))
        return ps

    def out_shape(self, shape):
        if shape != (self.in_features,):
            raise ConfigurationError(f"linear {self.name!r}: expected ({self.in_features},), got {shape}")
        return (self.out_features,)

    def forward(self, store, x, train):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ConfigurationError(f"linear {self.name!r}: expected (N, {self.in_features}), got {x.shape}")
        y = x @ store.effective(f"{self.name}.weight").T
        if self.bias:
            y = y + store.effective(f"{self.name}.bias")
        return y, (x if train else None)

    def backward(self, store, cache, dy):
        x = cache
        store.add_grad(f"{self.name}.weight", dy.T @ x)
        if self.bias:
            store.add_grad(f"{self.name}.bias", dy.sum(axis=0))
        return dy @ store.effective(f"{self.name}.weight")


@dataclass(frozen=True)
class BasicBlock(Layer):
    """CIFAR residual block: conv-bn-relu-conv-bn plus a parameter-free shortcut.

    When the block changes resolution or width, the shortcut subsamples by
    ``stride`` and zero-pads channels evenly on both sides. ``mid_channels`` is
    the width of the inner conv and is what structured pruning shrinks.
    """

    name: str
    in_channels: int
    mid_channels: int
    out_channels: int
    stride: int = 1

    @property
    def conv1(self):
        return Conv2d(f"{self.name}.conv1", self.in_channels, self.mid_channels, 3, self.stride, 1)

    @property
    def bn1(self):
        return BatchNorm(f"{self.name}.bn1", self.mid_channels)

    @property
    def conv2(self):
        return Conv2d(f"{self.name}.conv2", self.mid_channels, self.out_channels, 3, 1, 1)

    @property
    def bn2(self):
        return BatchNorm(f"{self.name}.bn2", self.out_channels)

    def sublayers(self):
        return [self.conv1, self.bn1, self.conv2, self.bn2]

    def walk(self):
        yield self
        yield from self.sublayers()

    def params(self):
        return [p for layer in self.sublayers() for p in layer.params()]

    def buffers(self):
        out = {}
        for layer in self.sublayers():
            out.update(layer.buffers())
        return out

    def out_shape(self, shape):
        s = shape
        for layer in self.sublayers():
            s = layer.out_shape(s)
        c, h, w = shape
        if self.out_channels < self.in_channels or (h + self.stride - 1) // self.stride != s[1]:
            raise ConfigurationError(f"block {self.name!r}: shortcut cannot match branch shape {s}")
        return s

    def _pad(self):
        lo = (self.out_channels - self.in_channels) // 2
        return lo, self.out_channels - self.in_channels - lo

    def forward(self, store, x, train):
        caches = []
        h = x
        for i, layer in enumerate(self.sublayers()):
            h, c = layer.forward(store, h, train)
            caches.append(c)
            if i == 1:
                h, c = ReLU().forward(store, h, train)
                caches.append(c)
        sc = x[:, :, :: self.stride, :: self.stride] if self.stride != 1 else x
        if self.out_channels != self.in_channels:
            lo, hi = self._pad()
            sc = np.pad(sc, ((0, 0), (lo, hi), (0, 0), (0, 0)))
        out, rc = ReLU().forward(store, h + sc, train)
        return out, ((caches, rc, x.shape) if train else None)

    def backward(self, store, cache, dy):
        caches, rc, xshape = cache
        d = dy * rc
        dsc = d
        conv1, bn1, conv2, bn2 = self.sublayers()
        d = bn2.backward(store, caches[4], d)
        d = conv2.backward(store, caches[3], d)
        d = d * caches[2]
        d = bn1.backward(store, caches[1], d)
        dx = conv1.backward(store, caches[0], d)
        if self.out_channels != self.in_channels:
            lo, _ = self._pad()
            dsc = dsc[:, lo : lo + self.in_channels]
        if self.stride != 1:
            dx[:, :, :: self.stride, :: self.stride] += dsc
        else:
            dx = dx + dsc
        return dx


LAYER_TYPES = {cls.__name__: cls for cls in (Conv2d, BatchNorm, ReLU, MaxPool2d, GlobalAvgPool, Flatten, Linear, BasicBlock)}


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    cls = LAYER_TYPES.get(d.pop("type", None))
    if cls is None:
        raise ConfigurationError(f"unknown layer type in {d}")
    return cls(**d)
