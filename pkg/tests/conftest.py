import numpy as np
import pytest

from prunelab.nn import Architecture, ParamStore, backward, forward


def tiny_arch(layers, input_shape, classes, name="tiny"):
    return Architecture(name, input_shape, classes, layers)


def store_for(arch, seed=0, dtype=np.float64):
    return ParamStore.initialize(arch, seed, dtype)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_check(arch, x, seed=0, eps=1e-5, tol=1e-6):
    """Central differences of sum(logits * r) against backward, for every parameter and the input."""
    store = store_for(arch, seed)
    for p in store.params.values():  # move BN/bias off their trivial init
        if p.kind != "weight":
            p.weight += np.random.default_rng(seed + 1).normal(0, 0.3, p.weight.shape)
    mode = "train"
    logits, cache = forward(store, arch, x, mode)
    r = np.random.default_rng(seed + 2).normal(size=logits.shape)
    dx = backward(store, arch, cache, r)

    def loss(xx=x):
        return float(np.sum(forward(store, arch, xx, mode)[0] * r))

    worst = 0.0
    for name, p in store.items():
        num = np.zeros_like(p.weight)
        flat = p.weight.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss()
            flat[i] = old - eps
            down = loss()
            flat[i] = old
            num.reshape(-1)[i] = (up - down) / (2 * eps)
        err = np.linalg.norm(num - p.grad) / max(np.linalg.norm(num), 1e-12)
        worst = max(worst, err)
        assert err <= tol, f"{name}: relative error {err:.3g}"
    num = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.reshape(-1)[i] += eps
        xm.reshape(-1)[i] -= eps
        num.reshape(-1)[i] = (loss(xp) - loss(xm)) / (2 * eps)
    err = np.linalg.norm(num - dx) / max(np.linalg.norm(num), 1e-12)
    assert err <= tol, f"input: relative error {err:.3g}"
    assert store_for(arch).params.keys() == store.params.keys()
    return worst
