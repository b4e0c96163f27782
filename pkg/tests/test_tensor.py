import numpy as np
import pytest

from csnln import ops
from csnln.tensor import GradTape, Tensor, backward, finite_diff_check, zeros

from conftest import randt


def test_tensor_is_immutable_copy():
    src = np.ones((1, 1, 2, 2))
    t = Tensor(src)
    src[0, 0, 0, 0] = 5.0
    assert t.data[0, 0, 0, 0] == 1.0
    with pytest.raises(ValueError):
        t.data[0, 0, 0, 0] = 3.0


@pytest.mark.filterwarnings("ignore:.*encountered in divide:RuntimeWarning")
def test_non_finite_rejected():
    with pytest.raises(FloatingPointError):
        Tensor([1.0, np.nan])
    a = Tensor([1.0, 0.0])
    with pytest.raises(FloatingPointError):
        ops.div(a, Tensor([0.0, 0.0]))


def test_integer_data_promoted_to_float():
    assert Tensor([[1, 2]]).dtype == np.float64


def test_backward_sum_gives_ones(rng):
    x = randt(rng, 2, 3, 4, 4, requires_grad=True)
    with GradTape() as tape:
        loss = ops.sum(x)
    np.testing.assert_array_equal(backward(loss, tape)[x], np.ones(x.shape))


def test_backward_half_square_gives_x(rng):
    x = randt(rng, 1, 2, 3, 3, requires_grad=True)
    with GradTape() as tape:
        loss = ops.mul(ops.sum(ops.mul(x, x)), 0.5)
    np.testing.assert_allclose(backward(loss, tape)[x], x.data, rtol=0, atol=1e-15)


def test_backward_accumulates_reused_tensor(rng):
    x = randt(rng, 3, requires_grad=True)
    with GradTape() as tape:
        loss = ops.sum(ops.add(ops.mul(x, 2.0), ops.mul(x, 3.0)))
    np.testing.assert_allclose(backward(loss, tape)[x], np.full(3, 5.0))


def test_backward_skips_tensors_without_grad(rng):
    x = randt(rng, 3, requires_grad=True)
    c = randt(rng, 3)
    with GradTape() as tape:
        loss = ops.sum(ops.mul(x, c))
    grads = backward(loss, tape)
    assert c not in grads
    np.testing.assert_allclose(grads[x], c.data)


def test_ops_outside_tape_are_not_recorded(rng):
    x = randt(rng, 3, requires_grad=True)
    y = ops.mul(x, 2.0)
    with GradTape() as tape:
        loss = ops.sum(x)
    assert y not in tape
    np.testing.assert_array_equal(backward(loss, tape)[x], np.ones(3))


def test_backward_rejects_non_scalar(rng):
    x = randt(rng, 3, requires_grad=True)
    with GradTape() as tape:
        y = ops.mul(x, 2.0)
    with pytest.raises(ValueError):
        backward(y, tape)


def test_composite_conv_prelu_sum_matches_finite_differences(rng):
    x = randt(rng, 1, 2, 5, 5)
    w = randt(rng, 3, 2, 3, 3)
    slope = Tensor(np.full(3, 0.25))
    err = finite_diff_check(lambda a, b: ops.sum(ops.prelu(ops.conv2d(a, b, pad=1), slope)), [x, w])
    assert err < 1e-4


def test_finite_diff_exact_for_linear(rng):
    c = rng.standard_normal((2, 3))
    assert finite_diff_check(lambda x: ops.sum(ops.mul(x, c)), randt(rng, 2, 3)) < 1e-8


def test_finite_diff_quadratic(rng):
    assert finite_diff_check(lambda x: ops.sum(ops.mul(x, x)), randt(rng, 2, 3), eps=1e-4) < 1e-6


def test_finite_diff_softmax(rng):
    r = rng.standard_normal((2, 5))
    err = finite_diff_check(lambda x: ops.sum(ops.mul(ops.softmax(x, axis=1), r)), randt(rng, 2, 5))
    assert err < 1e-4


def test_finite_diff_detects_wrong_gradient(rng):
    from csnln.tensor import make_result

    def bad_square(x):
        return make_result(x.data ** 2, (x,), lambda g: (g * x.data,))  # missing factor 2

    assert finite_diff_check(lambda x: ops.sum(bad_square(x)), randt(rng, 4)) > 0.4


@pytest.mark.filterwarnings("ignore:.*encountered in divide:RuntimeWarning")
def test_finite_diff_non_finite_is_error():
    x = Tensor([1.0])
    with pytest.raises(FloatingPointError):
        finite_diff_check(lambda t: ops.sum(ops.div(1.0, ops.sub(t, 1.0))), x)


def test_nested_tapes_are_independent(rng):
    x = randt(rng, 2, requires_grad=True)
    with GradTape() as outer:
        a = ops.mul(x, 3.0)
        with GradTape() as inner_tape:
            b = ops.sum(ops.mul(x, x))
        loss = ops.sum(a)
    np.testing.assert_allclose(backward(loss, outer)[x], np.full(2, 3.0))
    np.testing.assert_allclose(backward(b, inner_tape)[x], 2 * x.data)


def test_zeros_helper():
    z = zeros((1, 2, 3, 3))
    assert z.shape == (1, 2, 3, 3) and not z.data.any()
