"""Kernel tests: forward values, gradient checks against central differences,
and the accumulation/determinism contracts."""

import math

import numpy as np
import pytest

from pmlm import tensor as T
from pmlm.tensor import Tensor, backward

from helpers import finite_difference_grad, relative_error


def test_softmax_symmetry():
    out = T.softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_softmax_simplex_property():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.normal(0, 5, size=(4, 9))
        out = T.softmax(Tensor(x)).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3))
    out = T.matmul(Tensor(np.eye(3)), Tensor(a))
    np.testing.assert_array_equal(out.data, np.eye(3) @ a)


def test_cross_entropy_two_way_tie():
    # -log softmax([0, 0])[0] = ln 2
    loss = T.cross_entropy(Tensor([0.0, 0.0]), np.asarray(0))
    np.testing.assert_allclose(loss.item(), math.log(2.0), rtol=0, atol=1e-15)


def test_layer_norm_rows_standardized():
    rng = np.random.default_rng(3)
    x = rng.normal(2.0, 3.0, size=(5, 16))
    out = T.layer_norm(Tensor(x)).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-8)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-8)


def test_gelu_reference_points():
    # gelu(0) = 0, gelu(x) -> x for large x, gelu(-x) small
    out = T.gelu(Tensor([0.0, 10.0, -10.0])).data
    np.testing.assert_allclose(out[0], 0.0, atol=1e-15)
    np.testing.assert_allclose(out[1], 10.0, rtol=1e-12)
    np.testing.assert_allclose(out[2], 0.0, atol=1e-12)


def test_sum_gradient_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    backward(T.sum_(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_dot_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(T.sum_(x * x))
    np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=0, atol=1e-15)


def test_backward_accumulates_across_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = T.sum_(x * x)
    backward(loss)
    backward(loss)
    np.testing.assert_allclose(x.grad, [4.0, 8.0], rtol=0, atol=1e-15)
    x.zero_grad()
    backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=0, atol=1e-15)


def _check_grad(build, *tensors, seed_note=""):
    """Backprop through build() and compare every tensor's grad with central
    finite differences (h=1e-5, rel err < 1e-4)."""
    for t in tensors:
        t.zero_grad()
    backward(build())
    for i, t in enumerate(tensors):
        fd = finite_difference_grad(lambda: build().item(), t.data)
        err = relative_error(t.grad, fd)
        assert err.max() < 1e-4, f"tensor {i} {seed_note}: max rel err {err.max():.3e}"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_matmul_2d(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2)))
    _check_grad(lambda: T.sum_(T.softmax(a @ b) * w), a, b, seed_note=f"seed={seed}")


def test_grad_matmul_batched_broadcast():
    rng = np.random.default_rng(5)
    a = Tensor(rng.normal(size=(2, 3, 4, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    _check_grad(lambda: T.sum_(T.gelu(a @ b)), a, b)


def test_grad_add_mul_broadcast():
    rng = np.random.default_rng(6)
    a = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(5,)), requires_grad=True)
    _check_grad(lambda: T.sum_((a + b) * b), a, b)


def test_grad_layer_norm():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(1.0, 2.0, size=(4, 6)), requires_grad=True)
    w = Tensor(rng.normal(size=(6,)), requires_grad=True)
    _check_grad(lambda: T.sum_(T.layer_norm(x) * w), x, w)


def test_grad_log_softmax():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(3, 7)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 7)), requires_grad=True)
    _check_grad(lambda: T.sum_(T.log_softmax(x) * w), x, w)


def test_grad_take():
    rng = np.random.default_rng(10)
    table = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    idx = np.array([0, 2, 2, 5])
    _check_grad(lambda: T.sum_(T.gelu(T.take(table, idx))), table)


def test_grad_cross_entropy():
    rng = np.random.default_rng(11)
    logits = Tensor(rng.normal(size=(5, 9)), requires_grad=True)
    targets = rng.integers(0, 9, size=5)
    weights = Tensor(rng.random(5))
    _check_grad(lambda: T.sum_(T.cross_entropy_rows(logits, targets) * weights), logits)


def test_grad_mean_transpose_reshape():
    rng = np.random.default_rng(12)
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    _check_grad(lambda: T.mean(T.reshape(T.transpose(x, (2, 0, 1)), (4, 6)) * 3.0), x)


def test_dropout_scales_surviving_entries():
    rng = np.random.default_rng(13)
    x = Tensor(np.ones((64, 8)), requires_grad=True)
    out = T.dropout(x, 0.25, rng)
    kept = out.data != 0.0
    np.testing.assert_allclose(out.data[kept], 1.0 / 0.75, rtol=0, atol=1e-15)
    backward(T.sum_(out))
    np.testing.assert_array_equal(x.grad != 0.0, kept)
    assert T.dropout(x, 0.0, rng) is x


def test_shape_mismatch_names_primitive_and_shapes():
    with pytest.raises(ValueError, match=r"matmul.*\(3, 4\).*\(3, 4\)"):
        T.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4))))
    with pytest.raises(ValueError, match=r"add.*\(2,\).*\(3,\)"):
        T.add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(x * x)


def test_cross_entropy_rejects_bad_targets():
    with pytest.raises(ValueError, match="out of range"):
        T.cross_entropy_rows(Tensor(np.zeros((2, 3))), np.array([0, 3]))
    with pytest.raises(ValueError, match="non-finite"):
        T.cross_entropy_rows(Tensor(np.array([[np.inf, 0.0]])), np.array([0]))


def test_forward_determinism():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(6, 6))
    a = T.softmax(Tensor(x)).data
    b = T.softmax(Tensor(x.copy())).data
    np.testing.assert_array_equal(a, b)
