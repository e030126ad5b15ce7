import numpy as np
import pytest

from prunelab import optim
from prunelab.errors import ConfigurationError, NumericError
from prunelab.nn import ParamStore, load_checkpoint, save_checkpoint, build_architecture

PLAIN = optim.OptimConfig(momentum=0.0, weight_decay=0.0)


def one_param(w, kind="weight", dtype=np.float64):
    store = ParamStore(dtype)
    store.add("w", np.asarray(w, dtype=float), kind)
    return store


def test_plain_sgd_limit(rng):
    store = one_param(rng.normal(size=(3, 4)))
    w0 = store["w"].weight.copy()
    g = rng.normal(size=(3, 4))
    store["w"].grad[...] = g
    optim.step(store, PLAIN, 0.05)
    np.testing.assert_array_equal(store["w"].weight, w0 - 0.05 * g)


def test_masked_coordinate_has_no_weight_or_state(rng):
    store = one_param(rng.normal(size=5))
    store["w"].mask[2] = 0
    for _ in range(3):
        store["w"].grad[...] = rng.normal(size=5) * 10
        optim.step(store, optim.OptimConfig(), 0.1)
        assert store["w"].weight[2] == 0
        assert store["w"].momentum[2] == 0


def test_two_nesterov_steps_on_quadratic():
    # f(w) = w^2 (g = 2w), w0 = 1, lr = 0.1, beta = 0.9, no decay.
    # step 1: g=2,    v=2,    w = 1    - 0.1*(2    + 0.9*2)    = 0.62
    # step 2: g=1.24, v=3.04, w = 0.62 - 0.1*(1.24 + 0.9*3.04) = 0.2224
    cfg = optim.OptimConfig(momentum=0.9, weight_decay=0.0)
    store = one_param([1.0])
    expected = [0.62, 0.2224]
    for want in expected:
        store["w"].grad[...] = 2 * store["w"].weight
        optim.step(store, cfg, 0.1)
        assert store["w"].weight[0] == pytest.approx(want, abs=1e-15)
    assert store["w"].momentum[0] == pytest.approx(3.04, abs=1e-15)


def test_classical_momentum_two_steps():
    cfg = optim.OptimConfig(momentum=0.9, weight_decay=0.0, nesterov=False)
    store = one_param([1.0])
    # step 1: v=2, w=0.8; step 2: g=1.6, v=3.4, w=0.46
    for want in (0.8, 0.46):
        store["w"].grad[...] = 2 * store["w"].weight
        optim.step(store, cfg, 0.1)
        assert store["w"].weight[0] == pytest.approx(want, abs=1e-15)


def test_weight_decay_skips_bn_and_bias():
    cfg = optim.OptimConfig(momentum=0.0, weight_decay=0.5)
    store = ParamStore(np.float64)
    store.add("w", np.ones(2), "weight")
    store.add("b", np.ones(2), "bias")
    store.add("g", np.ones(2), "bn")
    optim.step(store, cfg, 0.1)
    np.testing.assert_array_equal(store["w"].weight, [0.95, 0.95])
    np.testing.assert_array_equal(store["b"].weight, [1.0, 1.0])
    np.testing.assert_array_equal(store["g"].weight, [1.0, 1.0])


def test_reset_makes_next_step_plain(rng):
    cfg = optim.OptimConfig(momentum=0.9, weight_decay=0.0)
    a = one_param(rng.normal(size=4))
    a["w"].momentum[...] = rng.normal(size=4)
    optim.reset_state(a)
    b = a.copy()
    g = rng.normal(size=4)
    a["w"].grad[...] = g
    b["w"].grad[...] = g
    optim.step(a, cfg, 0.1)
    # first step after reset: v = g, nesterov update = g + 0.9 g
    np.testing.assert_allclose(a["w"].weight, b["w"].weight - 0.1 * 1.9 * g, rtol=0, atol=1e-15)


def test_reset_idempotent_and_keeps_weights(rng, tmp_path):
    arch = build_architecture("mlp-small", 3)
    store = ParamStore.initialize(arch, 0, np.float32)
    for p in store.params.values():
        p.momentum[...] = 1
    w = {k: p.weight.copy() for k, p in store.items()}
    once = optim.reset_state(store.copy())
    twice = optim.reset_state(optim.reset_state(store.copy()))
    for k in store:
        np.testing.assert_array_equal(once[k].momentum, twice[k].momentum)
        assert not once[k].momentum.any()
        np.testing.assert_array_equal(once[k].weight, w[k])
    save_checkpoint(tmp_path / "r.ckpt", once, arch)
    back, _ = load_checkpoint(tmp_path / "r.ckpt")
    for k in store:
        assert back[k].weight.tobytes() == w[k].tobytes()


def test_plain_sgd_decreases_convex_quadratic():
    a = np.array([1.0, 4.0, 9.0])  # curvature L = 9, so lr < 2/9 must descend
    store = one_param([1.0, -2.0, 0.5])
    losses = []
    for _ in range(20):
        w = store["w"].weight
        losses.append(0.5 * np.sum(a * w * w))
        store["w"].grad[...] = a * w
        optim.step(store, PLAIN, 0.2)
    assert all(x > y for x, y in zip(losses, losses[1:]))


@pytest.mark.parametrize("lr", [0.0, -0.1])
def test_nonpositive_lr(lr):
    with pytest.raises(ConfigurationError):
        optim.step(one_param([1.0]), PLAIN, lr)


def test_non_finite_update():
    store = one_param([1.0])
    store["w"].grad[...] = np.inf
    with pytest.raises(NumericError):
        optim.step(store, PLAIN, 0.1)


@pytest.mark.parametrize("kw", [{"momentum": 1.0}, {"momentum": -0.1}, {"weight_decay": -1}, {"batch_size": 0}])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        optim.OptimConfig(**kw)
