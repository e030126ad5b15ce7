"""Network architectures as immutable layer lists."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

from prunelab.errors import ConfigurationError
from prunelab.nn.layers import (
    BasicBlock,
    BatchNorm,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2d,
    ReLU,
    layer_from_dict,
)

ARCHITECTURES = ("mlp-small", "cnn-small", "vgg16-cifar", "resnet20", "resnet56", "resnet110")


@dataclass(frozen=True)
class Architecture:
    name: str
    input_shape: tuple[int, ...]
    num_classes: int
    layers: tuple[Layer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes  # validates composition eagerly

    @cached_property
    def shapes(self) -> list[tuple[int, ...]]:
        """Per-sample input shape of every top-level layer, plus the output shape last."""
        out = [self.input_shape]
        for layer in self.layers:
            out.append(layer.out_shape(out[-1]))
        if out[-1] != (self.num_classes,):
            raise ConfigurationError(f"{self.name}: output shape {out[-1]} != ({self.num_classes},)")
        return out

    def walk(self):
        for layer in self.layers:
            yield from layer.walk()

    def param_specs(self):
        return [p for layer in self.layers for p in layer.params()]

    def buffer_specs(self):
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def find(self, name: str) -> Layer:
        for layer in self.walk():
            if layer.name == name:
                return layer
        raise KeyError(name)

    def num_params(self) -> int:
        total = 0
        for p in self.param_specs():
            n = 1
            for d in p.shape:
                n *= d
            total += n
        return total

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(d["name"], tuple(d["input_shape"]), d["num_classes"], tuple(layer_from_dict(x) for x in d["layers"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _conv_bn_relu(name, cin, cout, stride=1):
    return [Conv2d(f"{name}", cin, cout, 3, stride, 1), BatchNorm(f"{name}.bn", cout), ReLU()]


def _mlp_small(classes, input_shape):
    d = input_shape[0]
    layers = [Linear("fc1", d, 64), ReLU(), Linear("fc2", 64, 64), ReLU(), Linear("fc3", 64, classes)]
    return layers


def _cnn_small(classes, input_shape):
    c = input_shape[0]
    return [
        *_conv_bn_relu("conv1", c, 16),
        MaxPool2d(),
        *_conv_bn_relu("conv2", 16, 32),
        MaxPool2d(),
        *_conv_bn_relu("conv3", 32, 64),
        GlobalAvgPool(),
        Linear("fc", 64, classes),
    ]


VGG16_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M")


def _vgg16(classes, input_shape):
    layers, cin, i = [], input_shape[0], 0
    for v in VGG16_CFG:
        if v == "M":
            layers.append(MaxPool2d())
        else:
            layers += _conv_bn_relu(f"features.{i}", cin, v)
            cin, i = v, i + 1
    layers += [Flatten(), Linear("classifier.0", 512, 512), BatchNorm("classifier.1", 512), ReLU(), Linear("classifier.3", 512, classes)]
    return layers


def _resnet(depth):
    if (depth - 2) % 6:
        raise ConfigurationError(f"resnet depth must be 6n+2, got {depth}")
    n = (depth - 2) // 6

    def build(classes, input_shape):
        layers = [Conv2d("conv1", input_shape[0], 16, 3, 1, 1), BatchNorm("bn1", 16), ReLU()]
        cin = 16
        for stage, (width, stride) in enumerate(((16, 1), (32, 2), (64, 2)), start=1):
            for b in range(n):
                layers.append(BasicBlock(f"layer{stage}.{b}", cin, width, width, stride if b == 0 else 1))
                cin = width
        layers += [GlobalAvgPool(), Linear("fc", 64, classes)]
        return layers

    return build


_BUILDERS = {
    "mlp-small": (_mlp_small, (2,)),
    "cnn-small": (_cnn_small, (3, 8, 8)),
    "vgg16-cifar": (_vgg16, (3, 32, 32)),
    "resnet20": (_resnet(20), (3, 32, 32)),
    "resnet56": (_resnet(56), (3, 32, 32)),
    "resnet110": (_resnet(110), (3, 32, 32)),
}


def build_architecture(name: str, classes: int = 10, input_shape=None) -> Architecture:
    """Build one of the named architectures.

    ``input_shape`` is the per-sample shape; each name has a default
    (2-vectors for ``mlp-small``, 3x8x8 for ``cnn-small``, 3x32x32 otherwise).
    """
    if name not in _BUILDERS:
        raise ConfigurationError(f"unknown architecture {name!r}; choose from {', '.join(ARCHITECTURES)}")
    builder, default_shape = _BUILDERS[name]
    shape = tuple(input_shape) if input_shape is not None else default_shape
    return Architecture(name, shape, classes, tuple(builder(classes, shape)))
