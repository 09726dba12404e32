"""Reverse-mode engine: every op against central finite differences."""

import numpy as np
import pytest

import tagsum.autodiff as ad
from tagsum.autodiff import Tensor
from tagsum.errors import ValidationError

STEP = 1e-6


def finite_diff(f, arrays, index):
    base = arrays[index]
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + STEP
        plus = f(arrays)
        flat[i] = keep - STEP
        minus = f(arrays)
        flat[i] = keep
        out[i] = (plus - minus) / (2 * STEP)
    return grad


def check(f_tensor, shapes, seed=0):
    """Compare analytic and numeric gradients of a scalar-valued composition."""
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = f_tensor(leaves)
    loss.backward()

    def f_value(values):
        return f_tensor([Tensor(v) for v in values]).item()

    for i, leaf in enumerate(leaves):
        numeric = finite_diff(f_value, [a.copy() for a in arrays], i)
        np.testing.assert_allclose(leaf.grad, numeric, rtol=1e-5, atol=1e-7)


class TestElementwise:
    def test_add_broadcast(self):
        check(lambda t: ad.tsum(ad.mul(t[0] + t[1], t[0] + t[1])),
              [(3, 4), (4,)])

    def test_sub_mul_div(self):
        check(lambda t: ad.tsum(ad.div(ad.mul(t[0], t[1]) - t[0], t[2])),
              [(2, 3), (2, 3), (1, 3)], seed=3)

    def test_exp_log_sqrt(self):
        check(lambda t: ad.tsum(ad.log(ad.exp(t[0]) + ad.as_tensor(2.0))
                                + ad.sqrt(ad.mul(t[0], t[0]) + ad.as_tensor(1.0))),
              [(4, 2)])

    def test_tanh_gelu(self):
        check(lambda t: ad.tsum(ad.tanh(t[0]) + ad.gelu(t[0])), [(5,5)], seed=1)


class TestMatmulShapes:
    def test_2d(self):
        check(lambda t: ad.tsum(t[0] @ t[1]), [(3, 4), (4, 2)])

    def test_batched(self):
        check(lambda t: ad.tsum(t[0] @ t[1]), [(2, 3, 4), (2, 4, 5)], seed=2)

    def test_rejects_vectors(self):
        with pytest.raises(ValidationError):
            ad.matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


class TestReductionsAndShapes:
    def test_sum_axis_keepdims(self):
        check(lambda t: ad.tsum(ad.mul(ad.tsum(t[0], axis=1, keepdims=True), t[0])),
              [(3, 4)])

    def test_mean_axis(self):
        check(lambda t: ad.tsum(ad.mul(ad.tmean(t[0], axis=0, keepdims=True), t[0])),
              [(4, 3)])

    def test_reshape_transpose_concat(self):
        def f(t):
            a = ad.reshape(t[0], (2, 6))
            b = ad.transpose(t[1], (1, 0))
            return ad.tsum(ad.mul(ad.concat([a, b], axis=0), ad.concat([a, b], axis=0)))
        check(f, [(3, 4), (6, 2)], seed=5)


class TestSoftmaxFamily:
    def test_softmax(self):
        check(lambda t: ad.tsum(ad.mul(ad.softmax(t[0]),
                                       Tensor(np.arange(12.).reshape(3, 4)))),
              [(3, 4)], seed=7)

    def test_logsumexp(self):
        check(lambda t: ad.tsum(ad.logsumexp(t[0], axis=1)), [(4, 5)], seed=8)

    def test_logsumexp_matches_numpy(self):
        x = np.random.default_rng(0).normal(size=(3, 4)) * 10
        ours = ad.logsumexp(Tensor(x), axis=1).data
        ref = np.log(np.exp(x - x.max(1, keepdims=True)).sum(1)) + x.max(1)
        np.testing.assert_allclose(ours, ref, rtol=1e-12)


class TestNorms:
    def test_layer_norm(self):
        check(lambda t: ad.tsum(ad.mul(ad.layer_norm(t[0], t[1], t[2]), t[0])),
              [(3, 6), (6,), (6,)], seed=9)

    def test_l2_normalize_unit_output(self):
        x = Tensor(np.random.default_rng(1).normal(size=(2, 5)))
        normed = ad.l2_normalize(x)
        np.testing.assert_allclose(np.linalg.norm(normed.data, axis=1), 1.0,
                                   atol=1e-12)

    def test_l2_normalize_grad(self):
        check(lambda t: ad.tsum(ad.mul(ad.l2_normalize(t[0]),
                                       Tensor(np.arange(10.).reshape(2, 5)))),
              [(2, 5)], seed=10)


class TestEngine:
    def test_backward_without_forward_errors(self):
        leaf = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValidationError):
            leaf.backward()

    def test_grad_accumulates_on_reuse(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = ad.tsum(ad.mul(x, x))  # x used twice: dy/dx = 2x = 4
        y.backward()
        np.testing.assert_allclose(x.grad, [4.0])

    def test_diamond_graph(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        a = ad.mul(x, ad.as_tensor(2.0))
        b = ad.mul(x, ad.as_tensor(5.0))
        out = ad.tsum(a + b)
        out.backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_constants_get_no_grad(self):
        c = Tensor(np.ones(2))
        x = Tensor(np.ones(2), requires_grad=True)
        ad.tsum(ad.mul(c, x)).backward()
        assert c.grad is None
        np.testing.assert_allclose(x.grad, [1.0, 1.0])
