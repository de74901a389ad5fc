"""Every op's gradient is checked against central finite differences."""

import numpy as np
import pytest

from hgtf import autodiff as ad


def fd_grad(fn, x, eps=1e-6):
    """Central-difference gradient of a scalar fn at x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn(x)
        flat[i] = orig - eps
        dn = fn(x)
        flat[i] = orig
        gf[i] = (up - dn) / (2 * eps)
    return g


def check(fn_t, fn_np, x, atol=1e-6, rtol=1e-5):
    t = ad.Tensor(np.array(x, dtype=np.float64))
    out = fn_t(t)
    out.backward()
    num = fd_grad(lambda v: float(fn_np(v)), np.array(x, dtype=np.float64))
    np.testing.assert_allclose(t.grad, num, atol=atol, rtol=rtol)


rng = np.random.default_rng(0)


@pytest.mark.parametrize(
    "fn,x",
    [
        (lambda t: ad.sum(ad.log(t)), np.abs(rng.standard_normal(5)) + 0.5),
        (lambda t: ad.sum(ad.exp(t)), rng.standard_normal(5)),
        (lambda t: ad.sum(ad.cos(t) + ad.sin(t)), rng.standard_normal(4)),
        (lambda t: ad.sum(ad.sqrt(t)), np.abs(rng.standard_normal(4)) + 0.5),
        (lambda t: ad.sum(ad.sigmoid(t)), rng.standard_normal(6)),
        (lambda t: ad.sum(ad.softplus(t)), rng.standard_normal(6)),
        (lambda t: ad.sum(ad.gammaln(t)), np.abs(rng.standard_normal(4)) + 0.5),
        (lambda t: ad.sum(t**3), rng.standard_normal(4)),
        (lambda t: ad.sum(t * t + 2.0 * t - t / 3.0), rng.standard_normal(5)),
        (lambda t: ad.sum(1.0 / (t + 4.0)), rng.standard_normal(5)),
        (lambda t: ad.logsumexp(t), rng.standard_normal(7)),
        (lambda t: ad.sum(ad.logsumexp(ad.reshape(t, (2, 3)), axis=1)), rng.standard_normal(6)),
        (lambda t: ad.sum(ad.cumsum(t) ** 2), rng.standard_normal(5)),
        (lambda t: ad.sum(ad.mean(ad.reshape(t, (2, 4)), axis=0) ** 2), rng.standard_normal(8)),
        (lambda t: ad.sum(ad.diagflat(t) @ np.arange(1.0, 4.0)), rng.standard_normal(3)),
        (lambda t: ad.sum(ad.transpose(ad.reshape(t, (2, 3))) ** 2), rng.standard_normal(6)),
        (lambda t: ad.sum(ad.clamp(t, -0.5, 0.5) ** 2), rng.standard_normal(8) * 2),
    ],
)
def test_op_gradients(fn, x):
    check(fn, lambda v: _plain(fn, v), x)


def _plain(fn, v):
    out = fn(ad.Tensor(v))
    return float(out.value)


def test_matmul_all_shapes():
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    v = rng.standard_normal(4)

    ta, tb, tv = ad.Tensor(a), ad.Tensor(b), ad.Tensor(v)
    out = ad.sum((ta @ tb) ** 2) + ad.sum((ta @ tv) ** 2) + ad.sum((tv @ tb) ** 2) + (tv @ tv)
    out.backward()

    def full(a_, b_, v_):
        return (
            np.sum((a_ @ b_) ** 2) + np.sum((a_ @ v_) ** 2) + np.sum((v_ @ b_) ** 2) + v_ @ v_
        )

    for arr, tens, pick in ((a, ta, 0), (b, tb, 1), (v, tv, 2)):
        args = [a.copy(), b.copy(), v.copy()]

        def fn(x, pick=pick):
            args2 = [a.copy(), b.copy(), v.copy()]
            args2[pick] = x
            return full(*args2)

        num = fd_grad(fn, arr)
        np.testing.assert_allclose(tens.grad, num, atol=1e-5, rtol=1e-5)


def test_getitem_gather_accumulates():
    x = ad.Tensor(rng.standard_normal((3, 5)))
    idx = np.array([0, 2, 2, 4])
    out = ad.sum(x[:, idx] ** 2)
    out.backward()

    def fn(v):
        return float(np.sum(v[:, idx] ** 2))

    np.testing.assert_allclose(x.grad, fd_grad(fn, x.value.copy()), atol=1e-5)


def test_slicing():
    x = ad.Tensor(rng.standard_normal(6))
    out = ad.sum(x[:4] * x[2:])
    out.backward()

    def fn(v):
        return float(np.sum(v[:4] * v[2:]))

    np.testing.assert_allclose(x.grad, fd_grad(fn, x.value.copy()), atol=1e-5)


def test_concat_and_reshape():
    a = ad.Tensor(rng.standard_normal((2, 2)))
    b = ad.Tensor(rng.standard_normal((2, 3)))
    out = ad.sum(ad.concat([a, b], axis=1) ** 2)
    out.backward()
    np.testing.assert_allclose(a.grad, 2 * a.value)
    np.testing.assert_allclose(b.grad, 2 * b.value)


def test_broadcasting_unbroadcast():
    a = ad.Tensor(rng.standard_normal((3, 4)))
    b = ad.Tensor(rng.standard_normal(4))
    c = ad.Tensor(rng.standard_normal((3, 1)))
    out = ad.sum(a * b + c)
    out.backward()
    np.testing.assert_allclose(b.grad, a.value.sum(axis=0), atol=1e-12)
    np.testing.assert_allclose(c.grad, np.full((3, 1), 4.0), atol=1e-12)


def test_reused_node_accumulates():
    x = ad.Tensor(np.array([1.5]))
    y = x * x + x * 3.0  # x appears twice
    out = ad.sum(y)
    out.backward()
    np.testing.assert_allclose(x.grad, [2 * 1.5 + 3.0])


def test_plain_array_dispatch_matches_tensor():
    x = rng.standard_normal((4, 3))
    t = ad.Tensor(x)
    for fn in (ad.exp, ad.sigmoid, ad.softplus, lambda v: ad.logsumexp(v, axis=1)):
        np.testing.assert_allclose(ad.value_of(fn(t)), fn(x))


def test_numpy_left_operand_uses_reflected_op():
    x = np.ones(3)
    t = ad.Tensor(np.full(3, 2.0))
    out = x + t
    assert isinstance(out, ad.Tensor)
    out2 = x * t
    assert isinstance(out2, ad.Tensor)
    s = ad.sum(out + out2)
    s.backward()
    np.testing.assert_allclose(t.grad, np.full(3, 2.0))
