import math

import numpy as np
import pytest

from oranslice.nn import (
    Adam,
    DenseNet,
    load_checkpoint,
    mish,
    mish_grad,
    relu,
    restore_rng,
    rng_state,
    save_checkpoint,
    soft_update,
    time_embedding,
)


def scalar_loss(net, x, c):
    return float(np.sum(net.forward(x) * c))


def fd_param_grads(net, x, c, h=1e-6):
    """Central finite differences of scalar_loss wrt every parameter."""
    grads = []
    for p in net.params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = scalar_loss(net, x, c)
            p[idx] = orig - h
            dn = scalar_loss(net, x, c)
            p[idx] = orig
            g[idx] = (up - dn) / (2 * h)
            it.iternext()
        grads.append(g)
    return grads


def fd_input_grad(net, x, c, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        up = scalar_loss(net, x, c)
        x[idx] = orig - h
        dn = scalar_loss(net, x, c)
        x[idx] = orig
        g[idx] = (up - dn) / (2 * h)
        it.iternext()
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


# ---------------------------------------------------------------------------
# activations and embeddings
# ---------------------------------------------------------------------------

def test_mish_values_and_grad(rng):
    x = rng.normal(size=200) * 5
    sp = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0)
    assert np.allclose(mish(x), x * np.tanh(sp), rtol=1e-14)
    h = 1e-6
    fd = (mish(x + h) - mish(x - h)) / (2 * h)
    assert np.allclose(mish_grad(x), fd, atol=1e-8)
    # overflow safety far into both tails
    big = np.array([-750.0, 750.0])
    assert np.all(np.isfinite(mish(big)))
    assert np.all(np.isfinite(mish_grad(big)))


def test_relu():
    x = np.array([-2.0, 0.0, 3.0])
    assert np.array_equal(relu(x), [0.0, 0.0, 3.0])


def test_time_embedding_shape_and_anchors():
    e = time_embedding([0.0, 1.0, 7.0], dim=16)
    assert e.shape == (3, 16)
    assert np.allclose(e[0, :8], 0.0)   # sin(0)
    assert np.allclose(e[0, 8:], 1.0)   # cos(0)
    assert e[1, 0] == pytest.approx(math.sin(1.0), rel=1e-14)
    assert e[1, 7] == pytest.approx(math.sin(1.0 / 10000.0), rel=1e-12)
    assert not np.allclose(e[1], e[2])
    with pytest.raises(ValueError):
        time_embedding([0.0], dim=7)


# ---------------------------------------------------------------------------
# network mechanics
# ---------------------------------------------------------------------------

def test_init_is_seeded_and_bounded():
    a = DenseNet([4, 8, 2], rng=11)
    b = DenseNet([4, 8, 2], rng=11)
    c = DenseNet([4, 8, 2], rng=12)
    for pa, pb in zip(a.params, b.params):
        assert np.array_equal(pa, pb)
    assert any(not np.array_equal(pa, pc)
               for pa, pc in zip(a.params, c.params))
    assert np.abs(a.weights[0]).max() <= 1.0 / math.sqrt(4)
    assert np.abs(a.weights[1]).max() <= 1.0 / math.sqrt(8)
    assert all(p.dtype == np.float64 for p in a.params)


def test_forward_shapes_and_1d_round_trip(rng):
    net = DenseNet([3, 5, 2], rng=0)
    x = rng.normal(size=(7, 3))
    y = net.forward(x)
    assert y.shape == (7, 2)
    y1 = net.forward(x[0])
    assert y1.shape == (2,)
    assert np.array_equal(y1, y[0])


def test_gradients_match_finite_differences(rng):
    # small version of the full 100-net sweep in the acceptance suite
    for trial in range(10):
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(2, 5))] + \
                [int(rng.integers(2, 7)) for _ in range(depth)] + \
                [int(rng.integers(1, 4))]
        act = "mish" if trial % 2 == 0 else "relu"
        net = DenseNet(sizes, activation=act, rng=int(rng.integers(1 << 30)))
        x = rng.normal(size=(int(rng.integers(1, 5)), sizes[0]))
        if act == "relu":  # keep preactivations away from the kink
            for w, b in zip(net.weights, net.biases):
                b += 0.05
        c = rng.normal(size=sizes[-1])
        y, cache = net.forward_cached(x)
        grads, gin = net.backward(cache, np.broadcast_to(c, y.shape))
        fd = fd_param_grads(net, x, c)
        for g, f in zip(grads, [g for p in fd for g in [p]]):
            assert rel_err(g, f) < 1e-4
        assert rel_err(gin, fd_input_grad(net, x, c)) < 1e-4


def test_backward_batch_sum_convention(rng):
    net = DenseNet([3, 4, 2], rng=5)
    x = rng.normal(size=(6, 3))
    c = rng.normal(size=2)
    y, cache = net.forward_cached(x)
    grads, _ = net.backward(cache, np.broadcast_to(c, y.shape))
    # summing per-sample gradients reproduces the batch gradient
    acc = [np.zeros_like(p) for p in net.params]
    for i in range(6):
        _, cache_i = net.forward_cached(x[i])
        gi, _ = net.backward(cache_i, c)
        for a, g in zip(acc, gi):
            a += g
    for a, g in zip(acc, grads):
        assert np.allclose(a, g, rtol=1e-12, atol=1e-12)


def test_copy_is_deep():
    net = DenseNet([2, 3, 1], rng=0)
    dup = net.copy()
    dup.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != dup.weights[0][0, 0]


# ---------------------------------------------------------------------------
# optimizer and target blending
# ---------------------------------------------------------------------------

def test_adam_first_step_magnitude():
    # with fresh state every coordinate moves by ~lr regardless of scale
    p = np.array([1.0, -2.0, 3.0])
    opt = Adam([p], lr=0.01)
    g = np.array([1e-4, -5.0, 800.0])
    opt.step([g])
    step = np.array([1.0, -2.0, 3.0]) - p
    assert np.allclose(np.abs(step), 0.01, rtol=1e-3)
    assert np.sign(step[1]) == -1.0  # moves against the gradient sign
    assert np.sign(step[2]) == 1.0


def test_adam_quadratic_convergence():
    p = np.array([5.0, -3.0])
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        opt.step([2.0 * p])  # d/dp of |p|^2
    assert np.abs(p).max() < 1e-3


def test_adam_state_round_trip(rng):
    p1 = rng.normal(size=(3, 2))
    p2 = p1.copy()
    a1, a2 = Adam([p1], lr=0.01), Adam([p2], lr=0.01)
    g = [rng.normal(size=(3, 2))]
    a1.step(g)
    a2.step(g)
    a2.load_state(a1.state_dict())
    g2 = [rng.normal(size=(3, 2))]
    a1.step(g2)
    a2.step(g2)
    assert np.array_equal(p1, p2)


def test_soft_update_blend():
    # rho is the retained fraction of the target
    t = DenseNet([2, 2], rng=1)
    s = DenseNet([2, 2], rng=2)
    expect = [0.995 * tp + 0.005 * sp
              for tp, sp in zip(t.params, s.params)]
    soft_update(t, s, rho=0.995)
    for got, exp in zip(t.params, expect):
        assert np.allclose(got, exp, rtol=1e-15)
    before = [p.copy() for p in t.params]
    soft_update(t, s, rho=1.0)
    for got, b in zip(t.params, before):
        assert np.array_equal(got, b)
    soft_update(t, s, rho=0.0)
    for got, sp in zip(t.params, s.params):
        assert np.array_equal(got, sp)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    net = DenseNet([4, 16, 16, 3], rng=7)
    opt = Adam(net.params, lr=1e-3)
    x = rng.normal(size=(5, 4))
    c = rng.normal(size=3)
    for _ in range(3):
        y, cache = net.forward_cached(x)
        grads, _ = net.backward(cache, np.broadcast_to(c, y.shape))
        opt.step(grads)
    payload = {
        "net": net.state_dict(),
        "opt": opt.state_dict(),
        "rng": rng_state(rng),
        "episode": 42,
        "note": "mid-run",
    }
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, payload)
    loaded = load_checkpoint(path)

    net2 = DenseNet.from_state(loaded["net"])
    for a, b in zip(net.params, net2.params):
        assert np.array_equal(a, b)
    assert np.array_equal(net.forward(x), net2.forward(x))
    assert loaded["episode"] == 42
    assert loaded["note"] == "mid-run"

    opt2 = Adam(net2.params, lr=0.0)
    opt2.load_state(loaded["opt"])
    assert opt2.t == opt.t and opt2.lr == opt.lr

    # restored RNG continues the exact same stream
    r2 = restore_rng(loaded["rng"])
    assert np.array_equal(rng.normal(size=8), r2.normal(size=8))


def test_checkpoint_version_gate(tmp_path):
    import json

    import numpy as np

    path = tmp_path / "old.npz"
    blob = json.dumps({"version": 999, "meta": {"root": {"__value__": 1}}})
    np.savez(path, __meta__=np.frombuffer(blob.encode(), dtype=np.uint8))
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)


def test_checkpoint_resume_reproduces_training(tmp_path, rng):
    """Stopping, checkpointing, and resuming matches an uninterrupted run."""

    def run(steps, net, opt, stream):
        for _ in range(steps):
            x = stream.normal(size=(4, 3))
            y, cache = net.forward_cached(x)
            grads, _ = net.backward(cache, 2.0 * y)  # d|y|^2
            opt.step(grads)

    net_a = DenseNet([3, 8, 2], rng=1)
    opt_a = Adam(net_a.params, lr=1e-3)
    stream_a = np.random.default_rng(99)
    run(10, net_a, opt_a, stream_a)

    net_b = DenseNet([3, 8, 2], rng=1)
    opt_b = Adam(net_b.params, lr=1e-3)
    stream_b = np.random.default_rng(99)
    run(5, net_b, opt_b, stream_b)
    save_checkpoint(tmp_path / "half.npz", {
        "net": net_b.state_dict(), "opt": opt_b.state_dict(),
        "rng": rng_state(stream_b)})
    loaded = load_checkpoint(tmp_path / "half.npz")
    net_c = DenseNet.from_state(loaded["net"])
    opt_c = Adam(net_c.params, lr=0.0)
    opt_c.load_state(loaded["opt"])
    run(5, net_c, opt_c, restore_rng(loaded["rng"]))

    for a, c in zip(net_a.params, net_c.params):
        assert np.array_equal(a, c)
