"""Finite-difference checks for every autograd primitive."""

import numpy as np
import pytest

from caplab.autograd import Tensor, concat, embedding


def numeric_grad(fn, x, dout, h=1e-6):
    """Central-difference gradient of sum(fn(x) * dout) w.r.t. x."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float((fn(x) * dout).sum())
        flat[i] = orig - h
        dn = float((fn(x) * dout).sum())
        flat[i] = orig
        grad.ravel()[i] = (up - dn) / (2 * h)
    return grad


def check(build, *shapes, seed=0, rtol=1e-6, atol=1e-9):
    """Compare autodiff grads of build(*tensors) against finite differences."""
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    dout = rng.normal(size=out.data.shape)
    out.backward(dout)
    for j, (arr, ten) in enumerate(zip(arrays, tensors)):
        def fn(x, j=j):
            args = [Tensor(a) for a in arrays]
            args[j] = Tensor(x)
            return build(*args).data

        expected = numeric_grad(fn, arr.copy(), dout)
        got = ten.grad if ten.grad is not None else np.zeros_like(arr)
        np.testing.assert_allclose(got, expected, rtol=rtol, atol=atol)


class TestElementwise:
    def test_add_broadcast(self):
        check(lambda a, b: a + b, (3, 4), (4,))

    def test_mul_broadcast(self):
        check(lambda a, b: a * b, (2, 3, 4), (3, 4))

    def test_sub_neg(self):
        check(lambda a, b: a - b * 2.0, (5,), (5,))

    def test_tanh(self):
        check(lambda a: a.tanh(), (3, 3))

    def test_gelu(self):
        check(lambda a: a.gelu(), (4, 5))


class TestMatmulShapes:
    def test_plain(self):
        check(lambda a, b: a.matmul(b), (3, 4), (4, 5))

    def test_batched_times_weight(self):
        check(lambda a, b: a.matmul(b), (2, 3, 4), (4, 5))

    def test_batched_batched(self):
        check(lambda a, b: a.matmul(b), (2, 2, 3, 4), (2, 2, 4, 3))


class TestShapeOps:
    def test_getitem_slice(self):
        check(lambda a: a[:, 1:3], (3, 5))

    def test_reshape_transpose(self):
        check(lambda a: a.reshape(2, 3, 2, 2).transpose(0, 2, 1, 3), (2, 3, 4))

    def test_concat(self):
        check(lambda a, b: concat([a, b], axis=1), (2, 3), (2, 4))

    def test_sum_mean(self):
        check(lambda a: a.sum(axis=1), (3, 4))
        check(lambda a: a.mean(axis=-1, keepdims=True), (3, 4))


class TestFusedOps:
    def test_softmax(self):
        check(lambda a: a.softmax(), (3, 6))

    def test_softmax_with_mask_bias(self):
        bias = np.triu(np.full((5, 5), -np.inf), k=1)
        check(lambda a: (a + bias).softmax(), (2, 5, 5))

    def test_layer_norm(self):
        check(lambda a, g, b: a.layer_norm(g, b), (4, 6), (6,), (6,), rtol=1e-5)


class TestGraph:
    def test_reused_node_accumulates(self):
        check(lambda a: a * a + a, (3, 3))

    def test_gradient_accumulation_across_branches(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        out = a.tanh() + a * 2.0
        out.backward(np.ones((2, 2)))
        expected = (1 - np.tanh(a.data) ** 2) + 2.0
        np.testing.assert_allclose(a.grad, expected, rtol=1e-12)

    def test_embedding_scatter(self):
        rng = np.random.default_rng(4)
        w = Tensor(rng.normal(size=(7, 3)), requires_grad=True)
        idx = np.array([[0, 2, 2], [6, 0, 1]])
        out = embedding(w, idx)
        dout = rng.normal(size=out.data.shape)
        out.backward(dout)
        expected = np.zeros((7, 3))
        np.add.at(expected, idx, dout)
        np.testing.assert_allclose(w.grad, expected, rtol=1e-12)

    def test_no_grad_for_constants(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        const = Tensor(np.ones((2, 2)))
        out = a * const
        out.backward(np.ones((2, 2)))
        assert const.grad is None
        np.testing.assert_allclose(a.grad, np.ones((2, 2)))
