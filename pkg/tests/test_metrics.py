import itertools
import warnings

import numpy as np
import pytest

from prunelab.errors import DataError
from prunelab.metrics import (
    ModelCost,
    accuracy,
    count_cost,
    evaluation_subset,
    mask_loss_gap,
    output_gap,
    reduction,
)
from prunelab.nn import Conv2d, Flatten, Linear, ParamStore, build_architecture
from prunelab.pruning import FilterMask, PruneSpec, WeightMask, apply_mask, build_mask, score, shrink_structured

from conftest import store_for, tiny_arch


def test_conv_macs_formula():
    arch = tiny_arch([Conv2d("conv", 16, 32), Flatten(), Linear("fc", 32 * 32 * 32, 10)], (16, 32, 32), 10)
    conv = count_cost(arch).per_layer[0]
    assert conv["macs"] == 16 * 9 * 32 * 32 * 32 == 4_718_592
    assert conv["params"] == 16 * 9 * 32


def test_linear_cost():
    cost = count_cost(tiny_arch([Linear("fc", 10, 10)], (10,), 10))
    assert (cost.macs, cost.params, cost.flops) == (100, 110, 200)
    assert cost.convention == "flops=2*macs"


def test_params_match_architecture_and_flops_double_macs():
    for name in ("cnn-small", "resnet20", "resnet56", "vgg16-cifar"):
        arch = build_architecture(name, 10)
        cost = count_cost(arch)
        assert cost.params == arch.num_params() == sum(r["params"] for r in cost.per_layer)
        assert cost.flops == 2 * cost.macs
    assert round(count_cost(build_architecture("resnet56")).params / 1e6, 2) == 0.85


def test_masked_count_equals_shrunk_count():
    arch = build_architecture("resnet20", 10)
    store = ParamStore.initialize(arch)
    spec = PruneSpec("l1_filter", 0.5)
    mask = build_mask(score(store, arch, spec), spec, arch)
    apply_mask(store, mask, arch)
    new, new_arch = shrink_structured(store, arch, mask)
    masked, shrunk = count_cost(arch, store), count_cost(new_arch)
    assert (masked.params, masked.macs) == (shrunk.params, shrunk.macs)
    assert count_cost(arch).params == arch.num_params()  # arch-only count ignores masks


def test_reduction():
    a = ModelCost(1000, 4000)
    assert reduction(a, a) == (0.0, 0.0)
    assert reduction(a, ModelCost(500, 1000)) == (50.0, 75.0)
    with pytest.warns(UserWarning):
        p, f = reduction(a, ModelCost(1100, 4000))
    assert p == pytest.approx(-10.0)


def test_accuracy_hand_count():
    # identity head: logits are the inputs, so predictions are the argmax columns
    arch = tiny_arch([Linear("fc", 3, 3, bias=False)], (3,), 3)
    store = store_for(arch)
    store["fc.weight"].weight[...] = np.eye(3)
    x = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 0], [0, 0, 1], [0, 1, 0], [1, 0, 0]], float)
    y = np.array([0, 1, 2, 1, 1, 0, 0, 2, 2, 0])
    # confusion diagonal: rows 0,1,2,4,6,7,9 correct -> 7/10
    assert accuracy(store, arch, (x, y)) == 0.7


def test_accuracy_perfect_and_chance(rng):
    arch = tiny_arch([Linear("fc", 4, 4, bias=False)], (4,), 4)
    store = store_for(arch)
    store["fc.weight"].weight[...] = np.eye(4)
    y = np.arange(400) % 4
    assert accuracy(store, arch, (np.eye(4)[y], y)) == 1.0
    acc = accuracy(store, arch, (rng.normal(size=(400, 4)), y))
    assert abs(acc - 0.25) < 4 * np.sqrt(0.25 * 0.75 / 400)


def test_accuracy_empty():
    arch = tiny_arch([Linear("fc", 2, 2)], (2,), 2)
    with pytest.raises(DataError):
        accuracy(store_for(arch), arch, (np.zeros((0, 2)), np.zeros(0, int)))


def _filter_net():
    arch = tiny_arch([Conv2d("conv", 4, 4, kernel_size=1, padding=0), Flatten(), Linear("fc", 4, 2)], (4, 1, 1), 2)
    store = store_for(arch, 5)
    return arch, store


def test_mask_loss_gap_identity_and_zero_filter(rng):
    arch, store = _filter_net()
    data = (rng.normal(size=(20, 4, 1, 1)), rng.integers(0, 2, 20))
    assert mask_loss_gap(store, arch, FilterMask.identity(arch), data) == 0.0
    store["conv.weight"].weight[2] = 0
    keep = np.array([True, True, False, True])
    assert abs(mask_loss_gap(store, arch, FilterMask({"conv": keep}), data)) <= 1e-12


def test_mask_loss_gap_exhaustive_argmin(rng):
    arch, store = _filter_net()
    data = (rng.normal(size=(50, 4, 1, 1)), rng.integers(0, 2, 50))
    gaps = {}
    for kept in itertools.combinations(range(4), 2):
        keep = np.zeros(4, bool)
        keep[list(kept)] = True
        gaps[kept] = mask_loss_gap(store, arch, FilterMask({"conv": keep}), data)
    best = min(gaps, key=gaps.get)
    # independent re-evaluation of each candidate by zeroing weights directly
    x, y = data
    def loss(w, b, wf, bf):
        h = np.einsum("oc,nc->no", w, x[:, :, 0, 0]) + b
        z = h @ wf.T + bf
        z = z - z.max(axis=1, keepdims=True)
        return float(np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(y)), y]))
    W = store["conv.weight"].weight[:, :, 0, 0]
    b = store["conv.bias"].weight if "conv.bias" in store.params else np.zeros(4)
    base = loss(W, b, store["fc.weight"].weight, store["fc.bias"].weight)
    for kept, gap in gaps.items():
        Wm = W.copy()
        drop = [j for j in range(4) if j not in kept]
        Wm[drop] = 0
        fc = store["fc.weight"].weight.copy()
        fc[:, drop] = 0
        assert gap == pytest.approx(loss(Wm, b, fc, store["fc.bias"].weight) - base, abs=1e-9)
    assert gaps[best] == min(gaps.values())


def test_output_gap_identity_nonnegative(rng):
    arch, store = _filter_net()
    data = (rng.normal(size=(20, 4, 1, 1)), rng.integers(0, 2, 20))
    assert output_gap(store, arch, FilterMask.identity(arch), data) == 0.0
    for j in range(4):
        keep = np.ones(4, bool)
        keep[j] = False
        assert output_gap(store, arch, FilterMask({"conv": keep}), data) >= 0


def test_output_gap_monotone_under_refinement(rng):
    arch = tiny_arch([Linear("fc", 4, 3, bias=False)], (4,), 3)
    store = store_for(arch, 1)
    x = np.eye(4)  # orthogonal inputs
    data = (x, np.zeros(4, int))
    order = rng.permutation(12)
    prev = 0.0
    for k in range(1, 13):
        keep = np.ones(12, bool)
        keep[order[:k]] = False
        gap = output_gap(store, arch, WeightMask({"fc.weight": keep.reshape(3, 4)}), data)
        assert gap >= prev
        prev = gap


def test_evaluation_subset_fixed(rng):
    x, y = rng.normal(size=(3000, 2)), rng.integers(0, 2, 3000)
    a = evaluation_subset((x, y), 1000, seed=3)
    b = evaluation_subset((x, y), 1000, seed=3)
    assert len(a[0]) == 1000
    np.testing.assert_array_equal(a[0], b[0])
    small = (x[:10], y[:10])
    assert evaluation_subset(small, 1000) is small
