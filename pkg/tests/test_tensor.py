"""Operator semantics and gradient checks for the autodiff engine."""

import numpy as np
import pytest

from skelflow import tensor as T
from skelflow.tensor import Tensor

from oracles import assert_close_grad, loop_corr2d_same, numeric_gradient


def _grad_of(build, *arrays):
    """Backward gradients of a scalar-valued builder wrt each input array."""
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*ts)
    T.backward(loss)
    return [t.grad for t in ts]


def _fd_of(build, *arrays):
    grads = []
    for i in range(len(arrays)):
        def f(xi, i=i):
            args = [Tensor(a) for a in arrays]
            args[i] = Tensor(xi)
            return build(*args).item()
        grads.append(numeric_gradient(f, arrays[i].copy()))
    return grads


def _check_op(build, *arrays):
    an = _grad_of(build, *arrays)
    fd = _fd_of(build, *arrays)
    for a, f in zip(an, fd):
        assert_close_grad(a, f)


# -- exact forward values ----------------------------------------------------

def test_matmul_value():
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert out.data.tolist() == [[3.0], [7.0]]


def test_matmul_rejects_bad_shapes():
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones((2, 2, 2))), Tensor(np.ones((2, 2))))


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 4, 5))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    out = T.conv2d_same(Tensor(x), Tensor(k))
    assert np.array_equal(out.data, x)


def test_conv2d_zero_kernel_gives_bias():
    x = np.ones((1, 3, 3))
    k = np.zeros((1, 1, 3, 3))
    out = T.conv2d_same(Tensor(x), Tensor(k), Tensor([2.5]))
    assert np.array_equal(out.data, np.full((1, 3, 3), 2.5))


def test_conv2d_hand_case_matches_loop_oracle():
    # 2x2 input, horizontal difference kernel, zero same-padding.
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    k = np.array([[[[1.0, 0.0, -1.0]]]])
    expect = loop_corr2d_same(x, k)
    assert expect.tolist() == [[[-2.0, 1.0], [-4.0, 3.0]]]
    out = T.conv2d_same(Tensor(x), Tensor(k))
    assert np.array_equal(out.data, expect)


def test_conv2d_matches_loop_oracle_random():
    rng = np.random.default_rng(7)
    for _ in range(5):
        x = rng.standard_normal((2, 5, 6))
        k = rng.standard_normal((3, 2, 3, 7))
        b = rng.standard_normal(3)
        out = T.conv2d_same(Tensor(x), Tensor(k), Tensor(b))
        assert np.allclose(out.data, loop_corr2d_same(x, k, b), atol=1e-12)


def test_conv2d_batched_equals_per_item():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((4, 2, 3, 5))
    k = rng.standard_normal((1, 2, 3, 3))
    b = rng.standard_normal(1)
    out = T.conv2d_same(Tensor(x), Tensor(k), Tensor(b))
    for i in range(4):
        single = T.conv2d_same(Tensor(x[i]), Tensor(k), Tensor(b))
        # batched einsum may contract in a different order -> last-ulp wiggle
        assert np.allclose(out.data[i], single.data, rtol=0, atol=1e-12)


def test_conv2d_rejects_even_kernel():
    with pytest.raises(ValueError):
        T.conv2d_same(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 2, 3))))


def test_maxpool_value_and_ties():
    out = T.maxpool_axis(Tensor([[1.0, 5.0], [3.0, 2.0]]), 0)
    assert out.data.tolist() == [[3.0, 5.0]]
    # tie: gradient goes to the first occurrence only
    x = Tensor([[2.0], [2.0]], requires_grad=True)
    T.backward(T.maxpool_axis(x, 0).sum())
    assert x.grad.tolist() == [[1.0], [0.0]]


def test_rot_axes_is_bit_exact_involution():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 24, 18))
    once = T.rot_axes(Tensor(x), (1, 0, 2))
    assert once.shape == (24, 2, 18)
    back = T.rot_axes(once, (1, 0, 2))
    assert np.array_equal(back.data, x)
    assert back.data.tobytes() == x.tobytes()


def test_rot_axes_rejects_bad_perm():
    with pytest.raises(ValueError):
        T.rot_axes(Tensor(np.ones((2, 3))), (0, 0))


def test_broadcast_stretch_only():
    a = Tensor(np.ones((2, 1, 4)))
    b = Tensor(np.ones((2, 3, 4)))
    assert T.add(a, b).shape == (2, 3, 4)
    with pytest.raises(ValueError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))
    with pytest.raises(ValueError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((1, 2, 3))))


def test_log_rejects_nonpositive():
    with pytest.raises(ValueError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(ValueError):
        T.log(Tensor([-1.0]))


def test_nonfinite_is_an_error_state():
    with pytest.raises(T.NonFiniteError):
        Tensor([np.nan])
    with pytest.raises(T.NonFiniteError):
        T.exp(Tensor([1000.0]))  # overflow to inf


def test_sum_mean_axes():
    x = Tensor(np.arange(24.0).reshape(2, 3, 4))
    assert x.sum().item() == 276.0
    assert x.mean().item() == 11.5
    assert x.sum(axes=(1, 2)).shape == (2,)
    assert np.allclose(x.sum(axes=(1, 2)).data, [66.0, 210.0])
    assert x.mean(axes=1, keepdims=True).shape == (2, 1, 4)


def test_narrow_and_concat_roundtrip():
    x = Tensor(np.arange(12.0).reshape(2, 2, 3))
    lo = T.narrow(x, 0, 0, 1)
    hi = T.narrow(x, 0, 1, 1)
    assert np.array_equal(T.concat([lo, hi], 0).data, x.data)
    with pytest.raises(ValueError):
        T.narrow(x, 0, 1, 2)


def test_clamp_values():
    x = Tensor([-7.0, -5.0, 0.0, 5.0, 9.0])
    assert T.clamp(x, -5.0, 5.0).data.tolist() == [-5.0, -5.0, 0.0, 5.0, 5.0]


def test_logabsdet_value_and_singular():
    q = Tensor([[2.0, 0.0], [0.0, 3.0]])
    assert abs(T.logabsdet(q).item() - np.log(6.0)) < 1e-14
    with pytest.raises(ValueError):
        T.logabsdet(Tensor([[1.0, 1.0], [1.0, 1.0]]))


# -- gradient oracle ----------------------------------------------------------

def test_grad_add_mul_scale():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((2, 1, 4))  # exercises broadcast unreduction
    _check_op(lambda x, y: (T.add(x, y) * T.broadcast_mul(x, y)).sum(), a, b)
    _check_op(lambda x: T.scale(x, -2.5).sum(), a)


def test_grad_elementwise():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((3, 4)) * 0.5
    _check_op(lambda t: T.exp(t).sum(), x)
    _check_op(lambda t: T.log(T.exp(t)).sum(), x)
    _check_op(lambda t: T.sigmoid(t).sum(), x)
    _check_op(lambda t: (T.clamp(t, -0.3, 0.3) * T.clamp(t, -0.3, 0.3)).sum(), x)


def test_grad_reductions_and_shapes():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((2, 3, 4))
    _check_op(lambda t: t.mean(), x)
    _check_op(lambda t: (t.sum(axes=(0, 2)) * t.sum(axes=(0, 2))).sum(), x)
    _check_op(lambda t: T.rot_axes(t, (2, 0, 1)).mean(axes=(1, 2)).sum(), x)
    _check_op(lambda t: T.reshape(t, (6, 4)).sum(axes=1).mean(), x)


def test_grad_pooling():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((3, 4, 2))
    _check_op(lambda t: (T.maxpool_axis(t, 1) * T.maxpool_axis(t, 1)).sum(), x)
    _check_op(lambda t: (T.avgpool_axis(t, 0) * T.avgpool_axis(t, 0)).sum(), x)


def test_grad_matmul():
    rng = np.random.default_rng(15)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    _check_op(lambda x, y: (T.matmul(x, y) * T.matmul(x, y)).sum(), a, b)


def test_grad_conv2d():
    rng = np.random.default_rng(16)
    x = rng.standard_normal((2, 4, 5))
    k = rng.standard_normal((2, 2, 3, 3)) * 0.3
    b = rng.standard_normal(2) * 0.1
    _check_op(lambda xx, kk, bb: (lambda o: (o * o).sum())(T.conv2d_same(xx, kk, bb)),
              x, k, b)
    xb = rng.standard_normal((3, 1, 2, 6))
    kb = rng.standard_normal((1, 1, 3, 7)) * 0.3
    _check_op(lambda xx, kk: T.sigmoid(T.conv2d_same(xx, kk)).sum(), xb, kb)


def test_grad_narrow_concat():
    rng = np.random.default_rng(17)
    x = rng.standard_normal((4, 3))

    def build(t):
        lo = T.narrow(t, 0, 0, 2)
        hi = T.narrow(t, 0, 2, 2)
        return (T.concat([hi, lo], 0) * t).sum()

    _check_op(build, x)


def test_grad_logabsdet():
    rng = np.random.default_rng(18)
    q = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
    _check_op(lambda t: T.logabsdet(t), q)


def test_grad_accumulates_across_uses():
    x = Tensor([2.0], requires_grad=True)
    loss = (x * x).sum() + T.scale(x, 3.0).sum()  # d/dx = 2x + 3 = 7
    T.backward(loss)
    assert abs(x.grad[0] - 7.0) < 1e-12


# -- backward machinery --------------------------------------------------------

def test_backward_twice_errors():
    x = Tensor([1.0], requires_grad=True)
    loss = (x * x).sum()
    T.backward(loss)
    with pytest.raises(T.GradientError):
        T.backward(loss)


def test_backward_needs_scalar_and_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(T.GradientError):
        T.backward(x * x)  # not scalar
    with pytest.raises(T.GradientError):
        T.backward(Tensor(3.0))  # no graph


def test_no_grad_blocks_recording():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        loss = (x * x).sum()
    assert not loss.requires_grad
    with pytest.raises(T.GradientError):
        T.backward(loss)
