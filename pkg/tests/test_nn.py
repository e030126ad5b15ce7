import math

import numpy as np
import pytest

from prunelab.errors import ConfigurationError, DataError, NumericError, ParseError, UsageError
from prunelab.nn import (
    BasicBlock,
    BatchNorm,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    ParamStore,
    ReLU,
    backward,
    build_architecture,
    cross_entropy,
    forward,
    load_checkpoint,
    read_tensors,
    save_checkpoint,
    write_tensors,
)
from prunelab.nn.arch import Architecture

from conftest import fd_check, store_for, tiny_arch


# ---------------------------------------------------------------- forward oracles


def test_identity_linear_returns_input(rng):
    arch = tiny_arch([Linear("fc", 4, 4)], (4,), 4)
    store = store_for(arch)
    store["fc.weight"].weight[...] = np.eye(4)
    x = rng.normal(size=(5, 4))
    logits, _ = forward(store, arch, x)
    np.testing.assert_array_equal(logits, x)


def test_fully_masked_network_outputs_bias(rng):
    arch = tiny_arch([Linear("fc1", 3, 5), ReLU(), Linear("fc2", 5, 2)], (3,), 2)
    store = store_for(arch)
    store["fc1.bias"].weight[...] = [0.5, -1.0, 2.0, 0.0, 1.0]
    store["fc2.bias"].weight[...] = [0.25, -0.75]
    for name in ("fc1.weight", "fc2.weight"):
        store[name].mask[...] = 0
    logits, _ = forward(store, arch, rng.normal(size=(7, 3)))
    np.testing.assert_array_equal(logits, np.tile([0.25, -0.75], (7, 1)))


def test_two_layer_mlp_by_hand():
    arch = tiny_arch([Linear("fc1", 2, 2), ReLU(), Linear("fc2", 2, 2)], (2,), 2)
    store = store_for(arch)
    store["fc1.weight"].weight[...] = [[1.0, 2.0], [-1.0, 0.5]]
    store["fc1.bias"].weight[...] = [0.5, -0.5]
    store["fc2.weight"].weight[...] = [[2.0, -1.0], [0.0, 3.0]]
    store["fc2.bias"].weight[...] = [0.1, 0.2]
    # h = relu([1*1 + 2*2 + 0.5, -1*1 + 0.5*2 - 0.5]) = relu([5.5, -0.5]) = [5.5, 0]
    # y = [2*5.5 - 0 + 0.1, 0 + 0 + 0.2] = [11.1, 0.2]
    logits, _ = forward(store, arch, np.array([[1.0, 2.0]]))
    np.testing.assert_allclose(logits, [[11.1, 0.2]], rtol=0, atol=1e-12)


def test_linear_sum_loss_weight_grad_is_input_broadcast(rng):
    arch = tiny_arch([Linear("fc", 3, 2, bias=False)], (3,), 2)
    store = store_for(arch)
    x = rng.normal(size=(1, 3))
    _, cache = forward(store, arch, x, "train")
    backward(store, arch, cache, np.ones((1, 2)))
    np.testing.assert_allclose(store["fc.weight"].grad, np.tile(x, (2, 1)))


def test_masked_weight_gradient_is_zero(rng):
    arch = tiny_arch([Linear("fc", 3, 2)], (3,), 2)
    store = store_for(arch)
    store["fc.weight"].mask[1, 2] = 0
    _, cache = forward(store, arch, rng.normal(size=(4, 3)) * 100, "train")
    backward(store, arch, cache, rng.normal(size=(4, 2)))
    assert store["fc.weight"].grad[1, 2] == 0
    assert np.all(store["fc.weight"].grad[0] != 0)


# ---------------------------------------------------------------- finite differences


def test_fd_linear_relu(rng):
    arch = tiny_arch([Linear("fc1", 4, 6), ReLU(), Linear("fc2", 6, 3)], (4,), 3)
    fd_check(arch, rng.normal(size=(5, 4)))


def test_fd_batchnorm_1d(rng):
    # a bias feeding train-mode batchnorm has an identically zero gradient, so leave it out
    arch = tiny_arch([Linear("fc1", 4, 5, bias=False), BatchNorm("bn", 5), Linear("fc2", 5, 3)], (4,), 3)
    fd_check(arch, rng.normal(size=(6, 4)))


@pytest.mark.parametrize("stride,padding,bias", [(1, 1, False), (2, 1, True), (1, 0, True)])
def test_fd_conv(rng, stride, padding, bias):
    conv = Conv2d("conv", 2, 3, 3, stride, padding, bias)
    out = conv.out_shape((2, 6, 6))
    arch = tiny_arch([conv, Flatten(), Linear("fc", int(np.prod(out)), 2)], (2, 6, 6), 2)
    fd_check(arch, rng.normal(size=(2, 2, 6, 6)))


def test_fd_conv_batchnorm_maxpool_gap(rng):
    arch = tiny_arch(
        [Conv2d("conv", 2, 3), BatchNorm("conv.bn", 3), ReLU(), MaxPool2d(), GlobalAvgPool(), Linear("fc", 3, 2)],
        (2, 4, 4),
        2,
    )
    fd_check(arch, rng.normal(size=(3, 2, 4, 4)))


@pytest.mark.parametrize("cin,cmid,cout,stride", [(2, 3, 2, 1), (2, 2, 4, 2), (3, 2, 3, 1)])
def test_fd_basic_block(rng, cin, cmid, cout, stride):
    block = BasicBlock("block", cin, cmid, cout, stride)
    arch = tiny_arch([block, GlobalAvgPool(), Linear("fc", cout, 2)], (cin, 4, 4), 2)
    assert arch.num_params() <= 1000
    fd_check(arch, rng.normal(size=(3, cin, 4, 4)))


# ---------------------------------------------------------------- masks, determinism, purity


def test_mask_equals_premultiplied_weights(rng):
    arch = build_architecture("cnn-small", 4)
    store = store_for(arch, 3)
    for p in store.params.values():
        if p.kind == "weight":
            p.mask[...] = rng.random(p.mask.shape) < 0.6
    pre = store.copy()
    for p in pre.params.values():
        p.weight *= p.mask
    x = rng.normal(size=(4, 3, 8, 8))
    np.testing.assert_array_equal(forward(store, arch, x)[0], forward(pre, arch, x)[0])
    once = store.copy()
    once.apply_masks()
    twice = once.copy()
    twice.apply_masks()
    for name in once:
        np.testing.assert_array_equal(once[name].weight, twice[name].weight)


def test_eval_forward_mutates_nothing(rng):
    arch = build_architecture("cnn-small", 4)
    store = store_for(arch)
    forward(store, arch, rng.normal(size=(4, 3, 8, 8)), "train")
    before = {k: v.copy() for k, v in store.buffers.items()}
    weights = {k: p.weight.copy() for k, p in store.items()}
    forward(store, arch, rng.normal(size=(4, 3, 8, 8)), "eval")
    for k in before:
        np.testing.assert_array_equal(before[k], store.buffers[k])
    for k in weights:
        np.testing.assert_array_equal(weights[k], store[k].weight)


def test_train_forward_updates_running_stats(rng):
    arch = build_architecture("cnn-small", 4)
    store = store_for(arch)
    forward(store, arch, rng.normal(size=(4, 3, 8, 8)) + 3, "train")
    assert np.all(store.buffers["conv1.bn.running_mean"] != 0)


def test_bitwise_deterministic_trajectory():
    from prunelab import optim

    def run():
        arch = build_architecture("cnn-small", 3)
        store = ParamStore.initialize(arch, 11, np.float64)
        x = np.random.default_rng(0).normal(size=(8, 3, 8, 8))
        y = np.arange(8) % 3
        for _ in range(3):
            logits, cache = forward(store, arch, x, "train")
            _, g = cross_entropy(logits, y)
            backward(store, arch, cache, g)
            optim.step(store, optim.OptimConfig(), 0.05)
        return store

    a, b = run(), run()
    for k in a:
        assert a[k].weight.tobytes() == b[k].weight.tobytes()


# ---------------------------------------------------------------- errors


def test_shape_mismatch_is_configuration_error():
    arch = build_architecture("mlp-small", 2)
    with pytest.raises(ConfigurationError):
        forward(store_for(arch), arch, np.zeros((3, 5)))


def test_non_finite_activation_names_the_layer():
    arch = tiny_arch([Linear("fc1", 2, 2), ReLU(), Linear("fc2", 2, 2)], (2,), 2)
    store = store_for(arch)
    store["fc1.weight"].weight[0, 0] = np.inf
    with pytest.raises(NumericError, match="fc1"):
        forward(store, arch, np.ones((1, 2)))


def test_backward_rejects_eval_cache_and_foreign_store():
    arch = build_architecture("mlp-small", 2)
    store = store_for(arch)
    _, cache = forward(store, arch, np.ones((2, 2)), "eval")
    with pytest.raises(UsageError):
        backward(store, arch, cache, np.ones((2, 2)))
    _, cache = forward(store, arch, np.ones((2, 2)), "train")
    with pytest.raises(UsageError):
        backward(store.copy(), arch, cache, np.ones((2, 2)))


# ---------------------------------------------------------------- loss


def test_cross_entropy_uniform_logits_is_log_c():
    loss, _ = cross_entropy(np.zeros((4, 7)), np.array([0, 3, 6, 2]))
    assert loss == pytest.approx(math.log(7), abs=1e-12)


def test_cross_entropy_confident_correct_is_zero():
    loss, _ = cross_entropy(np.array([[1000.0, 0.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_matches_high_precision():
    from decimal import Decimal, getcontext

    getcontext().prec = 50
    z = np.array([[0.3, -1.2, 2.5], [1.0, 1.0, -0.5]])
    y = np.array([2, 0])
    total = Decimal(0)
    for row, lab in zip(z, y):
        denom = sum(Decimal(float(v)).exp() for v in row)
        total += denom.ln() - Decimal(float(row[lab]))
    loss, grad = cross_entropy(z, y)
    assert loss == pytest.approx(float(total / 2), abs=1e-13)
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)


def test_cross_entropy_bad_label():
    with pytest.raises(DataError):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


# ---------------------------------------------------------------- architectures


@pytest.mark.parametrize("name,millions", [("resnet56", 0.85), ("resnet110", 1.73)])
def test_resnet_param_counts(name, millions):
    assert round(build_architecture(name, 10).num_params() / 1e6, 2) == millions


def test_mlp_small_param_count_by_hand():
    # 2->64->64->10 with biases
    assert build_architecture("mlp-small", 10).num_params() == 2 * 64 + 64 + 64 * 64 + 64 + 64 * 10 + 10


def test_unknown_architecture():
    with pytest.raises(ConfigurationError):
        build_architecture("resnet1001")


def test_architecture_dict_round_trip():
    arch = build_architecture("resnet20", 10)
    assert Architecture.from_dict(arch.to_dict()) == arch


def test_incompatible_layers_rejected():
    with pytest.raises(ConfigurationError):
        tiny_arch([Linear("fc1", 3, 4), Linear("fc2", 5, 2)], (3,), 2)


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_bitwise(tmp_path, rng):
    arch = build_architecture("cnn-small", 5)
    store = ParamStore.initialize(arch, 2, np.float32)
    store["conv2.weight"].mask[3] = 0
    store.apply_masks()
    forward(store, arch, rng.normal(size=(4, 3, 8, 8)), "train")
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, store, arch)
    loaded, arch2 = load_checkpoint(path)
    assert arch2 == arch
    assert list(loaded.params) == list(store.params)
    for k in store:
        assert loaded[k].weight.tobytes() == store[k].weight.tobytes()
        np.testing.assert_array_equal(loaded[k].mask, store[k].mask)
    for k in store.buffers:
        np.testing.assert_array_equal(loaded.buffers[k], store.buffers[k])
    raw = read_tensors(path)
    assert raw["conv2.weight.mask"].dtype == np.uint8
    assert path.read_bytes()[:8] == b"PRNCKPT1"


def test_tensor_file_layout(tmp_path):
    path = tmp_path / "t.bin"
    write_tensors(path, {"a": np.array([1.5, 2.0], dtype=np.float32)})
    buf = path.read_bytes()
    expected = b"PRNCKPT1" + (1).to_bytes(4, "little") + (1).to_bytes(4, "little") + b"a"
    expected += bytes([0]) + (1).to_bytes(4, "little") + (2).to_bytes(8, "little")
    expected += np.array([1.5, 2.0], dtype="<f4").tobytes()
    assert buf == expected


@pytest.mark.parametrize("cut", [3, 20, 30])
def test_truncated_tensor_file(tmp_path, cut):
    path = tmp_path / "t.bin"
    write_tensors(path, {"a": np.zeros(3)})
    path.write_bytes(path.read_bytes()[:cut])
    with pytest.raises(ParseError):
        read_tensors(path)
