"""Minimal mask-aware network engine with explicit forward/backward passes."""

from prunelab.nn.arch import ARCHITECTURES, Architecture, build_architecture
from prunelab.nn.checkpoint import load_checkpoint, read_tensors, save_checkpoint, write_tensors
from prunelab.nn.layers import BasicBlock, BatchNorm, Conv2d, Flatten, GlobalAvgPool, Linear, MaxPool2d, ReLU
from prunelab.nn.network import backward, cross_entropy, forward, predict_logits
from prunelab.nn.store import Param, ParamStore

__all__ = [
    "ARCHITECTURES",
    "Architecture",
    "BasicBlock",
    "BatchNorm",
    "Conv2d",
    "Flatten",
    "GlobalAvgPool",
    "Linear",
    "MaxPool2d",
    "Param",
    "ParamStore",
    "ReLU",
    "backward",
    "build_architecture",
    "cross_entropy",
    "forward",
    "load_checkpoint",
    "predict_logits",
    "read_tensors",
    "save_checkpoint",
    "write_tensors",
]
