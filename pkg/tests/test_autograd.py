import numpy as np
import numpy.testing as npt
import pytest

from mcit import autograd as ag


def numeric_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f w.r.t. array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * eps)
        it.iternext()
    return g


def check_unary(op, x, atol=1e-8):
    t = ag.Tensor(x.copy(), requires_grad=True)
    out = op(t)
    w = np.random.default_rng(0).normal(size=out.data.shape)
    (out * ag.Tensor(w)).sum().backward()

    def f():
        return float((op(ag.Tensor(x)).data * w).sum())

    npt.assert_allclose(t.grad, numeric_grad(f, x), atol=atol, rtol=1e-5)


@pytest.mark.parametrize("op", [
    ag.exp, ag.log, ag.sqrt, ag.tanh, ag.sigmoid, ag.silu,
    ag.softplus, ag.relu, ag.gelu,
    lambda t: ag.power(t, 3.0),
    lambda t: ag.clip(t, 0.4, 1.6),
    lambda t: ag.softmax(t, axis=-1),
    lambda t: t.sum(axis=0),
    lambda t: t.mean(axis=1, keepdims=True),
    lambda t: t.reshape(6, 2),
    lambda t: t.transpose(1, 0, 2),
    lambda t: t[1:, 0, :],
])
def test_unary_ops_match_finite_differences(op):
    rng = np.random.default_rng(42)
    x = rng.uniform(0.5, 1.5, size=(3, 2, 2))  # positive: safe for log/sqrt
    check_unary(op, x)


@pytest.mark.parametrize("shapes", [
    ((4, 3), (4, 3)),
    ((4, 3), (3,)),      # broadcast
    ((1, 3), (4, 3)),
    ((4, 1), (1, 3)),
])
@pytest.mark.parametrize("op", [ag.add, ag.sub, ag.mul, ag.div])
def test_binary_ops_match_finite_differences(op, shapes):
    rng = np.random.default_rng(7)
    xa = rng.uniform(0.5, 1.5, size=shapes[0])
    xb = rng.uniform(0.5, 1.5, size=shapes[1])
    a = ag.Tensor(xa.copy(), requires_grad=True)
    b = ag.Tensor(xb.copy(), requires_grad=True)
    out = op(a, b)
    w = rng.normal(size=out.data.shape)
    (out * ag.Tensor(w)).sum().backward()

    def f():
        return float((op(ag.Tensor(xa), ag.Tensor(xb)).data * w).sum())

    npt.assert_allclose(a.grad, numeric_grad(f, xa), atol=1e-8, rtol=1e-5)
    npt.assert_allclose(b.grad, numeric_grad(f, xb), atol=1e-8, rtol=1e-5)


@pytest.mark.parametrize("shapes", [
    ((4, 3), (3, 5)),
    ((2, 4, 3), (3, 5)),        # batched lhs, broadcast rhs
    ((2, 4, 3), (2, 3, 5)),
    ((1, 4, 3), (2, 3, 5)),
])
def test_matmul_matches_finite_differences(shapes):
    rng = np.random.default_rng(3)
    xa = rng.normal(size=shapes[0])
    xb = rng.normal(size=shapes[1])
    a = ag.Tensor(xa.copy(), requires_grad=True)
    b = ag.Tensor(xb.copy(), requires_grad=True)
    out = a @ b
    w = rng.normal(size=out.data.shape)
    (out * ag.Tensor(w)).sum().backward()

    def f():
        return float(((xa @ xb) * w).sum())

    npt.assert_allclose(a.grad, numeric_grad(f, xa), atol=1e-7, rtol=1e-5)
    npt.assert_allclose(b.grad, numeric_grad(f, xb), atol=1e-7, rtol=1e-5)


def test_concat_splits_gradient():
    rng = np.random.default_rng(5)
    xa = rng.normal(size=(2, 3))
    xb = rng.normal(size=(4, 3))
    a = ag.Tensor(xa.copy(), requires_grad=True)
    b = ag.Tensor(xb.copy(), requires_grad=True)
    out = ag.concat([a, b], axis=0)
    w = rng.normal(size=(6, 3))
    (out * ag.Tensor(w)).sum().backward()
    npt.assert_allclose(a.grad, w[:2])
    npt.assert_allclose(b.grad, w[2:])


def test_grad_accumulates_over_reused_input():
    x = ag.Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x  # dy/dx = 2x + 1 = 5
    y.sum().backward()
    npt.assert_allclose(x.grad, [5.0])


def test_getitem_scatter_accumulates_repeated_indices():
    x = ag.Tensor(np.arange(4.0), requires_grad=True)
    idx = np.array([1, 1, 3])
    out = x[idx]
    out.sum().backward()
    npt.assert_allclose(x.grad, [0.0, 2.0, 0.0, 1.0])


def test_no_grad_blocks_graph():
    x = ag.Tensor(np.ones(3), requires_grad=True)
    with ag.no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert y._parents == ()


def test_detach_stops_gradient():
    x = ag.Tensor(np.ones(3), requires_grad=True)
    y = x.detach() * 3.0 + x
    y.sum().backward()
    npt.assert_allclose(x.grad, np.ones(3))


def test_backward_requires_scalar():
    x = ag.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_custom_op_with_hand_vjp():
    x = ag.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    out = ag.custom_op(x.data ** 2, [x], lambda g: (g * 2.0 * x.data,))
    out.sum().backward()
    npt.assert_allclose(x.grad, [2.0, 4.0])


def test_deep_chain_is_iterative():
    # topological sort must not hit the recursion limit
    x = ag.Tensor(np.array([1.0]), requires_grad=True)
    y = x
    for _ in range(3000):
        y = y + 0.001
    y.sum().backward()
    npt.assert_allclose(x.grad, [1.0])
