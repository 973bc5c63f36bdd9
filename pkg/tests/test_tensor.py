"""Autodiff core: op semantics, gradients vs central differences, stability."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scrl.tensor import (DimensionError, NonFiniteError, Tensor, concat,
                         layer_norm, log_softmax, no_grad, softmax)

from conftest import f64


def central_diff(loss_fn, t: Tensor, h=1e-6):
    """Independent finite-difference gradient of a scalar loss in float64."""
    flat = t.data.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = loss_fn()
        flat[i] = orig - h
        lm = loss_fn()
        flat[i] = orig
        out[i] = (lp - lm) / (2.0 * h)
    return out.reshape(t.data.shape)


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-12, np.abs(a) + np.abs(b)))


# ---- matmul ---------------------------------------------------------------

def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.array_equal((a @ b).data, b.data)


def test_matmul_projector_row_selection():
    p = Tensor(np.array([[1.0, 0.0], [0.0, 0.0]]))
    m = Tensor(np.array([[5.0, 6.0], [7.0, 8.0]]))
    assert np.array_equal((p @ m).data, np.array([[5.0, 6.0], [0.0, 0.0]]))


def test_matmul_gradient_matches_central_differences():
    rng = np.random.default_rng(42)
    a = f64(rng.standard_normal((3, 3)))
    b = f64(rng.standard_normal((3, 3)), requires_grad=False)
    (a @ b).sum().backward()
    num = central_diff(lambda: float((a @ b).sum().data), a)
    assert rel_err(a.grad, num) < 1e-6


def test_matmul_shape_mismatch_raises():
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_matmul_rejects_1d_operands():
    with pytest.raises(DimensionError):
        Tensor(np.ones(3)) @ Tensor(np.ones((3, 2)))


def test_batched_matmul_matches_loop():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((4, 5, 6))
    w = rng.standard_normal((6, 7))
    got = (Tensor(a) @ Tensor(w)).data
    want = np.stack([a[i] @ w for i in range(4)])
    assert np.allclose(got, want, atol=1e-12)


def test_batched_matmul_weight_gradient():
    rng = np.random.default_rng(2)
    a = f64(rng.standard_normal((3, 4, 5)), requires_grad=False)
    w = f64(rng.standard_normal((5, 2)))
    ((a @ w) * Tensor(rng.standard_normal((3, 4, 2)))).sum().backward()
    assert w.grad.shape == (5, 2)


# ---- softmax / log_softmax --------------------------------------------------

def test_softmax_uniform_on_constant_row():
    out = softmax(Tensor(np.zeros(4)), axis=-1)
    assert np.allclose(out.data, 0.25, atol=1e-12)


def test_softmax_shift_invariance():
    x = np.array([0.3, -1.2, 2.4, 0.0])
    a = softmax(Tensor(x), axis=-1).data
    b = softmax(Tensor(x + 123.0), axis=-1).data
    assert np.allclose(a, b, atol=1e-6)


def test_softmax_reference_values():
    # independent scalar evaluation of exp(x_i)/sum exp(x_j) for [1,2,3]
    e = [math.exp(v) for v in (1.0, 2.0, 3.0)]
    want = np.array([v / sum(e) for v in e])
    got = softmax(Tensor(np.array([1.0, 2.0, 3.0])), axis=-1).data
    assert np.allclose(got, [0.09003057, 0.24472847, 0.66524096], atol=1e-7)
    assert np.allclose(got, want, atol=1e-12)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=30, deadline=None)
def test_softmax_rows_sum_to_one(seed):
    x = np.random.default_rng(seed).standard_normal((5, 7)) * 10
    out = softmax(Tensor(x), axis=-1).data
    assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-6)
    assert (out > 0).all()


def test_log_softmax_matches_log_of_softmax():
    x = np.random.default_rng(3).standard_normal((4, 6))
    a = log_softmax(Tensor(x), axis=-1).data
    b = np.log(softmax(Tensor(x), axis=-1).data)
    assert np.allclose(a, b, atol=1e-12)


# ---- layer_norm -------------------------------------------------------------

def test_layer_norm_constant_row_maps_to_zero():
    x = Tensor(np.full((1, 4), 5.0))
    out = layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.allclose(out.data, 0.0, atol=1e-6)


def test_layer_norm_identity_on_normalized_row():
    rng = np.random.default_rng(5)
    row = rng.standard_normal(8)
    row = (row - row.mean()) / row.std()
    out = layer_norm(Tensor(row[None, :]), Tensor(np.ones(8)),
                     Tensor(np.zeros(8)), eps=1e-12)
    assert np.allclose(out.data[0], row, atol=1e-6)


def test_layer_norm_pre_affine_moments():
    x = np.random.default_rng(6).standard_normal((10, 16)) * 3 + 1
    out = layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    assert np.abs(out.mean(axis=-1)).max() < 1e-6
    assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-4


def test_layer_norm_gradient_matches_central_differences():
    rng = np.random.default_rng(7)
    x = f64(rng.standard_normal((2, 8)))
    g = f64(np.ones(8), requires_grad=False)
    b = f64(np.zeros(8), requires_grad=False)
    w = Tensor(rng.standard_normal((2, 8)))

    def loss():
        return (layer_norm(x, g, b) * w).sum()

    loss().backward()
    num = central_diff(lambda: float(loss().data), x)
    assert rel_err(x.grad, num) < 1e-5


def test_layer_norm_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        layer_norm(Tensor(np.ones((1, 4))), Tensor(np.ones(4)),
                   Tensor(np.zeros(4)), eps=0.0)


# ---- elementwise op gradients ----------------------------------------------

def _check_unary(fn, x, tol=1e-7):
    t = f64(x)
    fn(t).sum().backward()
    num = central_diff(lambda: float(fn(f64(x, requires_grad=False)).sum().data), t)
    assert rel_err(t.grad, num) < tol


def test_unary_op_gradients():
    rng = np.random.default_rng(8)
    x = rng.standard_normal(17)
    _check_unary(lambda t: t.exp(), x)
    _check_unary(lambda t: t.gelu(), x)
    _check_unary(lambda t: -t, x)
    _check_unary(lambda t: t ** 3, x)
    pos = np.abs(x) + 0.5
    _check_unary(lambda t: t.log(), pos)
    _check_unary(lambda t: t.sqrt(), pos)


def test_binary_op_gradients_with_broadcasting():
    rng = np.random.default_rng(9)
    a = f64(rng.standard_normal((3, 4)))
    b = f64(rng.standard_normal((1, 4)))
    w = Tensor(rng.standard_normal((3, 4)))

    def loss():
        return ((a * b + a / (b + 3.0) - b) * w).sum()

    loss().backward()
    for t in (a, b):
        num = central_diff(lambda: float(loss().data), t)
        assert rel_err(t.grad, num) < 1e-7


def test_reduction_and_shape_op_gradients():
    rng = np.random.default_rng(10)
    x = f64(rng.standard_normal((4, 6)))

    def loss():
        y = x.reshape(2, 12).transpose(1, 0).mean(axis=0, keepdims=True)
        return (y * y).sum() + x.sum(axis=1).mean()

    loss().backward()
    num = central_diff(lambda: float(loss().data), x)
    assert rel_err(x.grad, num) < 1e-7


def test_gather_and_concat_gradients():
    rng = np.random.default_rng(11)
    a = f64(rng.standard_normal((5, 3)))
    b = f64(rng.standard_normal((2, 3)))
    idx = np.array([0, 2, 2, 4])
    bidx = np.array([[0, 1], [2, 0]])

    def loss():
        cat = concat([a.gather_rows(idx), b], axis=0)
        return (cat * cat).sum() + (a.reshape(1, 5, 3).gather_axis1(bidx[:1])).sum()

    loss().backward()
    for t in (a, b):
        num = central_diff(lambda: float(loss().data), t)
        assert rel_err(t.grad, num) < 1e-7


# ---- invariants --------------------------------------------------------------

def test_ops_are_deterministic():
    x = np.random.default_rng(12).standard_normal((8, 8)).astype(np.float32)
    a = softmax(Tensor(x) @ Tensor(x.T), axis=-1).data
    b = softmax(Tensor(x) @ Tensor(x.T), axis=-1).data
    assert np.array_equal(a, b)


def test_non_finite_result_raises():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([-1.0])).log()
    with pytest.raises(NonFiniteError):
        Tensor(np.array([1.0])) / Tensor(np.array([0.0]))
    with pytest.raises(NonFiniteError):
        Tensor(np.array([np.nan]))


def test_grad_shape_matches_data_shape():
    x = f64(np.random.default_rng(13).standard_normal((3, 2, 4)))
    (x * 2.0).sum().backward()
    assert x.grad.shape == x.data.shape


def test_no_grad_blocks_tape():
    x = f64(np.ones(3))
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    with pytest.raises(ValueError):
        # scalar check still applies to non-scalars
        (x * 2.0).backward()


def test_backward_requires_scalar():
    x = f64(np.ones(3))
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_float32_training_dtype_preserved():
    x = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    y = layer_norm(x @ x, Tensor(np.ones(2, dtype=np.float32)),
                   Tensor(np.zeros(2, dtype=np.float32))).gelu()
    assert y.dtype == np.float32
    y.sum().backward()
    assert x.grad.dtype == np.float32


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_unbroadcast_add_gradient_is_row_count(seed):
    # d/db sum(a + b) where b broadcasts over rows equals the row count
    rng = np.random.default_rng(seed)
    rows = int(rng.integers(1, 6))
    a = f64(rng.standard_normal((rows, 3)), requires_grad=False)
    b = f64(rng.standard_normal(3))
    (a + b).sum().backward()
    assert np.allclose(b.grad, rows, atol=1e-12)
