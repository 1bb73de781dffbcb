import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ibmdn.errors import (
    InvalidShapeError,
    NotScalarError,
    NumericFaultError,
    ShapeMismatchError,
    UnsupportedKernelError,
)
from ibmdn.nn import functional as F
from ibmdn.tensor import (
    Parameter,
    Tensor,
    add,
    full,
    grad_check,
    make_op,
    mul,
    no_grad,
    ones,
    permute,
    reshape,
    seeded_uniform,
    sub,
    sum_all,
    unfold,
    zeros,
)

from oracles import unfold_loops


def test_create_fills():
    assert np.array_equal(zeros((2, 3)).data, np.zeros((2, 3)))
    assert full((1,), 2.5).data.tolist() == [2.5]
    assert np.all(ones((2, 2)).data == 1)


def test_seeded_uniform_is_reproducible():
    a = seeded_uniform((4,), -1, 1, seed=7)
    b = seeded_uniform((4,), -1, 1, seed=7)
    assert a.data.tobytes() == b.data.tobytes()
    assert np.all((a.data >= -1) & (a.data < 1))


@pytest.mark.parametrize("shape", [(0,), (2, 0), (-1, 3)])
def test_bad_extent_rejected(shape):
    with pytest.raises(InvalidShapeError):
        zeros(shape)


def test_add_and_mul_values():
    assert add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data.tolist() == [4.0, 6.0]
    x = Tensor(np.random.default_rng(0).standard_normal((3, 3)))
    assert np.all(mul(x, zeros((3, 3))).data == 0)


def test_channel_broadcast_add():
    x = np.arange(8, dtype=np.float64).reshape(1, 2, 2, 2)
    b = np.array([10.0, 20.0]).reshape(1, 2, 1, 1)
    out = add(Tensor(x), Tensor(b)).data
    expect = np.empty_like(x)
    for c in range(2):
        for i in range(2):
            for j in range(2):
                expect[0, c, i, j] = x[0, c, i, j] + b[0, c, 0, 0]
    assert np.array_equal(out, expect)


def test_broadcast_gradient_reduces():
    x = Tensor(np.ones((2, 3, 4, 4)), requires_grad=True)
    b = Tensor(np.ones((1, 3, 1, 1)), requires_grad=True)
    sum_all(add(x, b)).backward()
    assert np.all(b.grad == 32)


def test_incompatible_shapes():
    with pytest.raises(ShapeMismatchError):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_reshape_permute():
    x = Tensor(np.arange(1, 7, dtype=np.float64).reshape(2, 3))
    assert reshape(x, (3, 2)).data.ravel().tolist() == [1, 2, 3, 4, 5, 6]
    assert permute(x, (1, 0)).data.tolist() == [[1, 4], [2, 5], [3, 6]]
    with pytest.raises(InvalidShapeError):
        reshape(x, (4, 2))
    y = Tensor(np.random.default_rng(1).standard_normal((1, 2, 3, 4)))
    back = permute(permute(y, (0, 3, 1, 2)), (0, 2, 3, 1))
    assert np.array_equal(back.data, y.data)


def test_permute_backward_is_inverse():
    r = np.random.default_rng(3).standard_normal((1, 4, 2, 3))
    err = grad_check(lambda t: sum_all(mul(permute(t, (0, 3, 1, 2)), Tensor(r))),
                     np.random.default_rng(4).standard_normal((1, 2, 3, 4)))
    assert err < 1e-8


def test_unfold_example():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    cols = unfold(x, 3, 1).data
    assert cols[0, :, 0].tolist() == [0, 0, 0, 0, 1, 2, 0, 3, 4]


def test_unfold_identity_and_constant():
    x = np.random.default_rng(0).standard_normal((1, 2, 4, 4))
    assert np.array_equal(unfold(Tensor(x), 1, 0).data, x.reshape(1, 2, 16))
    c = unfold(Tensor(np.full((1, 1, 6, 6), 3.0)), 3, 1).data
    assert np.all(c[0, :, 2 * 6 + 2] == 3.0)


def test_unfold_even_kernel_rejected():
    with pytest.raises(UnsupportedKernelError):
        unfold(Tensor(np.ones((1, 1, 4, 4))), 2, 1)


def test_unfold_backward_counts_windows():
    x = Tensor(np.ones((1, 1, 5, 6)), requires_grad=True)
    sum_all(unfold(x, 3, 1)).backward()
    # oracle: number of unfolded entries that reference each pixel
    counts = np.zeros((5, 6))
    for i in range(5):
        for j in range(6):
            probe = np.zeros((1, 1, 5, 6))
            probe[0, 0, i, j] = 1.0
            counts[i, j] = unfold_loops(probe, 3, 1).sum()
    assert np.array_equal(x.grad[0, 0], counts)


def test_backward_square_and_concat():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    sum_all(mul(x, x)).backward()
    assert np.allclose(x.grad, [2, -4, 6])
    a = Tensor(np.ones((1, 2, 2, 2)), requires_grad=True)
    b = Tensor(np.ones((1, 3, 2, 2)), requires_grad=True)
    sum_all(F.channel_concat([a, b])).backward()
    assert np.all(a.grad == 1) and np.all(b.grad == 1)


def test_backward_accumulates_until_zeroed():
    p = Parameter(np.array([1.0, 2.0]), dtype=np.float64)
    sum_all(mul(p, p)).backward()
    sum_all(mul(p, p)).backward()
    assert np.allclose(p.grad, [4, 8])
    p.zero_grad()
    assert np.all(p.grad == 0)


def test_backward_errors():
    with pytest.raises(NotScalarError):
        Tensor(np.ones(3), requires_grad=True).backward()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert Tensor([1.0]).backward() is False
    assert caught


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = sum_all(mul(x, x))
    assert not y.requires_grad


def test_nan_raises_numeric_fault():
    with pytest.raises(NumericFaultError):
        make_op(np.array([np.nan]), (), None)
    with pytest.raises(NumericFaultError), np.errstate(over="ignore"):
        mul(Tensor(np.array([1e30], dtype=np.float32)), Tensor(np.array([1e30], dtype=np.float32)))


def test_grad_check_examples():
    assert grad_check(lambda x: sum_all(mul(x, 3.0)), np.random.default_rng(0).standard_normal(5)) < 1e-9
    assert grad_check(lambda x: sum_all(F.sigmoid(x)), np.zeros(4)) < 1e-6


def test_grad_check_flags_wrong_backward():
    def scaled_wrong(x):
        return make_op(x.data * 3.0, (x,), lambda g: (g * 6.0,))

    err = grad_check(lambda x: sum_all(scaled_wrong(x)), np.ones(3))
    assert abs(err - 0.5) < 1e-6


def test_grad_check_errors():
    with pytest.raises(NotScalarError):
        grad_check(lambda x: x, np.ones(3))
    with pytest.raises(ValueError):
        grad_check(lambda x: sum_all(x), np.ones(3), eps=0.1)


def test_conv_sum_gradient_example():
    rng = np.random.default_rng(5)
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    assert grad_check(lambda x: sum_all(F.conv2d(x, w)), rng.standard_normal((1, 2, 5, 5))) < 1e-5


finite = st.floats(-1e3, 1e3, allow_nan=False, width=64)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (2, 3), elements=finite))
def test_elementwise_commutative(a, b):
    assert add(Tensor(a), Tensor(b)).data.tobytes() == add(Tensor(b), Tensor(a)).data.tobytes()
    assert mul(Tensor(a), Tensor(b)).data.tobytes() == mul(Tensor(b), Tensor(a)).data.tobytes()
    assert np.array_equal(sub(Tensor(a), Tensor(b)).data, a - b)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_ops_deterministic(seed):
    x = seeded_uniform((2, 4, 5, 5), -1, 1, seed)
    w = seeded_uniform((4, 4, 3, 3), -1, 1, seed + 1)
    a = F.conv2d(x, w).data
    b = F.conv2d(x, w).data
    assert a.tobytes() == b.tobytes()
