import numpy as np
import pytest

from edgeorch import autodiff as ad
from edgeorch.autodiff import Adam, ConsumedGraphError, ParamStore, Tensor


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def check_grad(build_loss, params: list[Tensor], rtol=1e-5, atol=1e-7):
    for p in params:
        p.grad = None
    loss = build_loss()
    loss.backward()
    for p in params:
        num = numeric_grad(lambda: build_loss().item(), p.data)
        got = p.grad if p.grad is not None else np.zeros_like(p.data)
        np.testing.assert_allclose(got, num, rtol=rtol, atol=atol)


def test_sum_of_squares_gradient():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    loss = ad.tsum(ad.mul(p, p))
    loss.backward()
    np.testing.assert_allclose(p.grad, 2 * p.data)


def test_constant_loss_zero_gradient():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = ad.tsum(ad.mul(p, 0.0))
    loss.backward()
    np.testing.assert_allclose(p.grad, np.zeros(2))


def test_backward_twice_raises():
    p = Tensor(np.array([1.0]), requires_grad=True)
    loss = ad.tsum(ad.mul(p, p))
    loss.backward()
    with pytest.raises(ConsumedGraphError):
        loss.backward()


def test_building_on_consumed_node_raises():
    p = Tensor(np.array([1.0]), requires_grad=True)
    mid = ad.mul(p, p)
    ad.tsum(mid).backward()
    reused = ad.tsum(ad.mul(mid, 2.0))
    with pytest.raises(ConsumedGraphError):
        reused.backward()


def test_matmul_shapes_gradcheck(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    v = Tensor(rng.normal(size=4), requires_grad=True)
    w = Tensor(rng.normal(size=3), requires_grad=True)
    check_grad(lambda: ad.tsum(ad.mul(a @ b, 1.5)), [a, b])
    check_grad(lambda: ad.tsum(v @ b), [v, b])
    check_grad(lambda: ad.tsum(a @ v), [a, v])
    check_grad(lambda: w @ (a @ v), [a, v, w])


def test_broadcast_add_gradcheck(rng):
    m = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    bias = Tensor(rng.normal(size=4), requires_grad=True)
    check_grad(lambda: ad.tsum(ad.mul(m + bias, m + bias)), [m, bias])


def test_unary_ops_gradcheck(rng):
    x = Tensor(rng.normal(size=(4, 3)) + 0.3, requires_grad=True)
    check_grad(lambda: ad.tsum(ad.leaky_relu(ad.mul(x, 1.7))), [x])
    check_grad(lambda: ad.tsum(ad.elu(ad.mul(x, 1.3))), [x])
    check_grad(lambda: ad.tsum(ad.exp(ad.mul(x, 0.5))), [x])
    y = Tensor(np.abs(rng.normal(size=5)) + 0.5, requires_grad=True)
    check_grad(lambda: ad.tsum(ad.log(y)), [y])
    check_grad(lambda: ad.tsum(ad.rectifier(x)), [x], atol=1e-6)


def test_concat_mean_pick_gradcheck(rng):
    a = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    check_grad(lambda: ad.tsum(ad.mul(ad.concat([a, b], axis=1), 2.0)), [a, b])
    check_grad(lambda: ad.tsum(ad.mean_axis0(ad.mul(a, a))), [a])
    v = Tensor(rng.normal(size=6), requires_grad=True)
    check_grad(lambda: ad.pick(ad.mul(v, v), 2), [v])


def test_masked_row_softmax_values_and_grad(rng):
    scores = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    mask = np.array([[True, True, False], [True, True, True], [False, True, True]])
    out = ad.masked_row_softmax(scores, mask)
    assert np.all(out.data[~mask] == 0.0)
    np.testing.assert_allclose(out.data.sum(axis=1), np.ones(3))
    weights = rng.normal(size=(3, 3))
    check_grad(
        lambda: ad.tsum(ad.mul(ad.masked_row_softmax(scores, mask), weights)), [scores]
    )


def test_masked_log_softmax_exact_zero_probability(rng):
    logits = Tensor(rng.normal(size=5), requires_grad=True)
    mask = np.array([True, False, True, True, False])
    logp = ad.masked_log_softmax(logits, mask)
    probs = np.exp(logp.data)
    assert probs[1] == 0.0 and probs[4] == 0.0
    assert abs(probs.sum() - 1.0) < 1e-12
    check_grad(lambda: ad.pick(ad.masked_log_softmax(logits, mask), 2), [logits])


def test_masked_softmax_single_unmasked():
    logits = Tensor(np.array([5.0, -3.0, 0.1]))
    mask = np.array([False, True, False])
    probs = ad.exp(ad.masked_log_softmax(logits, mask))
    np.testing.assert_array_equal(probs.data, [0.0, 1.0, 0.0])


def test_detach_blocks_gradient():
    p = Tensor(np.array([2.0]), requires_grad=True)
    frozen = ad.mul(p, 3.0).detach()
    loss = ad.tsum(ad.mul(p, frozen))
    loss.backward()
    np.testing.assert_allclose(p.grad, [6.0])  # only the live branch contributes


def test_param_store_roundtrip():
    store = ParamStore()
    store.add("b.x", np.arange(4.0))
    store.add("a.y", np.ones((2, 2)))
    assert store.names() == ["a.y", "b.x"]
    state = store.state_dict()
    clone = store.clone()
    clone["b.x"].data[:] = 0
    np.testing.assert_array_equal(store["b.x"].data, np.arange(4.0))  # no aliasing
    store.load_state_dict(state)
    with pytest.raises(ValueError):
        store.load_state_dict({"a.y": np.ones((2, 2))})


def test_adam_descends_quadratic():
    p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = Adam([("p", p)], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        loss = ad.tsum(ad.mul(p, p))
        loss.backward()
        opt.step()
    assert np.all(np.abs(p.data) < 0.05)
