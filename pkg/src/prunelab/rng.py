"""Labeled random substreams.

Every consumer of randomness (weight init, data order, augmentation, random
saliency scores) draws from its own stream derived from ``(seed, label)``, so
changing how many numbers one consumer draws never perturbs another.
"""

import zlib

import numpy as np


def substream(seed: int, label: str, *extra: int) -> np.random.Generator:
    """Return a generator keyed by an integer seed, a string label and optional ints."""
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode("utf-8"))]
    key.extend(int(e) & 0xFFFFFFFF for e in extra)
    return np.random.default_rng(np.random.SeedSequence(key))
