import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ibmdn import nn
from ibmdn.errors import DegenerateBatchError, InvalidConfigError, InvalidShapeError, ShapeMismatchError
from ibmdn.gradcheck import REGISTRY, fd_check
from ibmdn.nn import functional as F
from ibmdn.tensor import Tensor, grad_check, mul, sum_all

from oracles import conv2d_loops, involution_loops

rng0 = np.random.default_rng(1234)


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


# -- conv2d -----------------------------------------------------------------


def test_conv_identity_kernel():
    x = rng0.standard_normal((1, 1, 4, 4))
    assert np.array_equal(F.conv2d(T(x), T(np.ones((1, 1, 1, 1))), T([0.0])).data, x)


def test_conv_ones_kernel_counts():
    out = F.conv2d(T(np.ones((1, 1, 3, 3))), T(np.ones((1, 1, 3, 3)))).data[0, 0]
    assert out.tolist() == [[4, 6, 4], [6, 9, 6], [4, 6, 4]]


def test_conv_zero_input_gives_bias():
    out = F.conv2d(T(np.zeros((2, 3, 4, 4))), T(rng0.standard_normal((5, 3, 3, 3))), T(np.arange(5.0))).data
    assert np.array_equal(out, np.broadcast_to(np.arange(5.0).reshape(1, 5, 1, 1), out.shape))


def test_conv_errors():
    x = T(np.ones((1, 4, 3, 3)))
    with pytest.raises(ShapeMismatchError):
        F.conv2d(x, T(np.ones((2, 3, 3, 3))))
    with pytest.raises(InvalidConfigError):
        F.conv2d(x, T(np.ones((3, 2, 3, 3))), groups=2)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("groups,k", [(1, 3), (2, 3), (1, 1), (4, 3), (2, 5)])
def test_conv_matches_loop_oracle(seed, groups, k):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    h, w = (int(v) for v in rng.integers(3, 8, size=2))
    cout = 4 if groups != 4 else 4
    x = rng.standard_normal((n, 4, h, w))
    wt = rng.standard_normal((cout, 4 // groups, k, k))
    b = rng.standard_normal(cout)
    got = F.conv2d(T(x), T(wt), T(b), groups=groups).data
    assert np.max(np.abs(got - conv2d_loops(x, wt, b, groups))) < 1e-6


def test_depthwise_equals_per_channel_conv():
    x = rng0.standard_normal((1, 3, 5, 5))
    wt = rng0.standard_normal((3, 1, 3, 3))
    got = F.conv2d(T(x), T(wt), groups=3).data
    for c in range(3):
        single = conv2d_loops(x[:, c:c + 1], wt[c:c + 1])
        assert np.allclose(got[:, c:c + 1], single, atol=1e-12)


# -- bsconv -----------------------------------------------------------------


def test_bsconv_is_composition():
    x = T(rng0.standard_normal((2, 4, 5, 5)))
    pw, dw, b = T(rng0.standard_normal((6, 4, 1, 1))), T(rng0.standard_normal((6, 1, 3, 3))), T(rng0.standard_normal(6))
    manual = F.conv2d(F.conv2d(x, pw), dw, b, groups=6)
    assert F.bsconv(x, pw, dw, b).data.tobytes() == manual.data.tobytes()


def test_bsconv_identity():
    c = 4
    pw = np.eye(c).reshape(c, c, 1, 1)
    dw = np.zeros((c, 1, 3, 3))
    dw[:, 0, 1, 1] = 1
    x = rng0.standard_normal((1, c, 5, 5))
    assert np.array_equal(F.bsconv(T(x), T(pw), T(dw), T(np.zeros(c))).data, x)


def test_bsconv_param_count():
    m = nn.BSConv(50, 50, 3)
    assert m.num_params() == 3000 == nn.BSConv.param_count(50, 50, 3)


# -- involution -------------------------------------------------------------


def test_involution_generate_shape_and_zero():
    inv = nn.Involution(4, 3, 1, 4)
    k = inv.kernels(T(rng0.standard_normal((2, 4, 5, 5))))
    assert k.shape == (2, 9, 5, 5)
    assert np.all(k.data == 0)


def test_involution_param_count():
    assert nn.Involution(50, 3, 1, 4).num_params() == 729 == nn.Involution.param_count(50)


def test_involution_groups_must_divide():
    with pytest.raises(InvalidConfigError):
        nn.Involution(6, 3, groups=4)
    with pytest.raises(InvalidConfigError):
        F.involution_apply(T(np.ones((1, 6, 3, 3))), T(np.ones((1, 36, 3, 3))), 3, 4)


def _delta_kernels(n, groups, k, h, w, scale=None):
    kern = np.zeros((n, groups * k * k, h, w))
    centre = (k // 2) * k + k // 2
    for g in range(groups):
        kern[:, g * k * k + centre] = 1.0 if scale is None else scale[g]
    return kern


@pytest.mark.parametrize("c,groups", [(4, 1), (4, 2), (4, 4), (6, 3)])
def test_involution_delta_identity(c, groups):
    x = rng0.standard_normal((2, c, 5, 6))
    out = F.involution_apply(T(x), T(_delta_kernels(2, groups, 3, 5, 6)), 3, groups).data
    assert np.array_equal(out, x)


def test_involution_group_scaling():
    x = rng0.standard_normal((1, 4, 4, 4))
    out = F.involution_apply(T(x), T(_delta_kernels(1, 2, 3, 4, 4, scale=[1.0, 2.0])), 3, 2).data
    assert np.array_equal(out[:, :2], x[:, :2])
    assert np.allclose(out[:, 2:], 2 * x[:, 2:])


def test_involution_averaging_constancy():
    x = np.full((1, 2, 7, 7), 0.3)
    kern = np.full((1, 9, 7, 7), 1 / 9)
    out = F.involution_apply(T(x), T(kern), 3, 1).data
    assert np.allclose(out[:, :, 1:-1, 1:-1], 0.3, atol=1e-15)


def test_involution_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        F.involution_apply(T(np.ones((1, 4, 5, 5))), T(np.ones((1, 9, 4, 5))), 3, 1)


@pytest.mark.parametrize("seed", range(6))
def test_involution_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    groups = int(rng.choice([1, 2, 4]))
    k = int(rng.choice([1, 3, 5]))
    n, h, w = 2, int(rng.integers(3, 8)), int(rng.integers(3, 8))
    x = rng.standard_normal((n, 4, h, w))
    kern = rng.standard_normal((n, groups * k * k, h, w))
    got = F.involution_apply(T(x), T(kern), k, groups).data
    assert np.max(np.abs(got - involution_loops(x, kern, k, groups))) < 1e-6


# -- pixel shuffle ----------------------------------------------------------


def test_pixel_shuffle_example():
    x = T(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1))
    assert F.pixel_shuffle(x, 2).data[0, 0].tolist() == [[1, 2], [3, 4]]
    y = T(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    assert F.pixel_unshuffle(y, 2).data.ravel().tolist() == [1, 2, 3, 4]


def test_pixel_shuffle_identity_and_errors():
    x = rng0.standard_normal((1, 3, 4, 4))
    assert np.array_equal(F.pixel_shuffle(T(x), 1).data, x)
    assert np.array_equal(F.pixel_unshuffle(T(x), 1).data, x)
    with pytest.raises(InvalidShapeError):
        F.pixel_shuffle(T(x), 2)
    with pytest.raises(InvalidShapeError):
        F.pixel_unshuffle(T(np.ones((1, 1, 3, 4))), 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 4), st.integers(0, 10 ** 6))
def test_pixel_shuffle_bijection(s, c, hw, seed):
    x = np.random.default_rng(seed).standard_normal((1, c * s * s, hw, hw))
    y = F.pixel_shuffle(T(x), s).data
    assert np.array_equal(F.pixel_unshuffle(T(y), s).data, x)
    assert np.array_equal(np.sort(y.ravel()), np.sort(x.ravel()))


# -- activations ------------------------------------------------------------


def test_activation_values():
    assert F.leaky_relu(T([-1.0]), 0.05).data.tolist() == [-0.05]
    assert F.sigmoid(T([0.0])).data.tolist() == [0.5]
    assert F.relu(T([-2.0, 3.0])).data.tolist() == [0.0, 3.0]
    x = T([0.0])
    x.requires_grad = True
    sum_all(F.leaky_relu(x, 0.05)).backward()
    assert x.grad.tolist() == [1.0]


def test_sigmoid_grad_check():
    assert grad_check(lambda x: sum_all(F.sigmoid(x)), rng0.standard_normal((2, 4, 5, 5))) < 1e-6


# -- batch norm -------------------------------------------------------------


def test_batch_norm_constant_input_gives_beta():
    bn = nn.BatchNorm2d(2).astype(np.float64)
    bn.beta.data[...] = [0.3, -0.7]
    out = bn(T(np.full((2, 2, 3, 3), 5.0))).data
    assert np.allclose(out[:, 0], 0.3) and np.allclose(out[:, 1], -0.7)


def test_batch_norm_eval_identity():
    bn = nn.BatchNorm2d(3).astype(np.float64).eval()
    x = rng0.standard_normal((2, 3, 4, 4))
    assert np.allclose(bn(T(x)).data, x / np.sqrt(1 + 1e-5), atol=1e-12)


def test_batch_norm_running_update():
    bn = nn.BatchNorm2d(1).astype(np.float64)
    x = rng0.standard_normal((2, 1, 3, 3)) + 4.0
    bn(T(x))
    assert np.isclose(bn.running_mean.data[0], 0.1 * x.mean())
    assert np.isclose(bn.running_var.data[0], 0.9 + 0.1 * x.var())


def test_batch_norm_degenerate():
    bn = nn.BatchNorm2d(2)
    with pytest.raises(DegenerateBatchError):
        bn(T(np.ones((1, 2, 1, 1))))


def test_batch_norm_train_statistics():
    bn = nn.BatchNorm2d(3).astype(np.float64)
    bn.gamma.data[...] = [2.0, -0.5, 1.0]
    bn.beta.data[...] = [0.1, 0.2, 0.3]
    out = bn(T(rng0.standard_normal((4, 3, 6, 6)) * 3 + 1)).data
    assert np.allclose(out.mean(axis=(0, 2, 3)), [0.1, 0.2, 0.3], atol=1e-5)
    assert np.allclose(out.std(axis=(0, 2, 3)), [2.0, 0.5, 1.0], atol=1e-5)


def test_batch_norm_eval_ignores_batch_content():
    bn = nn.BatchNorm2d(2).astype(np.float64).eval()
    bn.running_mean.data[...] = [1.0, 2.0]
    x = rng0.standard_normal((1, 2, 3, 3))
    other = np.concatenate([x, rng0.standard_normal((3, 2, 3, 3))])
    assert np.array_equal(bn(T(x)).data[0], bn(T(other)).data[0])


# -- concat / stats ---------------------------------------------------------


def test_concat_order_and_shape():
    a, b = T(rng0.standard_normal((1, 2, 3, 3))), T(rng0.standard_normal((1, 3, 3, 3)))
    out = F.channel_concat([a, b]).data
    assert np.array_equal(out[:, :2], a.data) and np.array_equal(out[:, 2:], b.data)
    parts = [T(np.ones((1, 25, 4, 4)))] * 4
    assert F.channel_concat(parts).shape == (1, 100, 4, 4)
    with pytest.raises(ShapeMismatchError):
        F.channel_concat([a, T(np.ones((1, 1, 2, 3)))])


def test_concat_gradient_matches_fd():
    a0, b0 = rng0.standard_normal((1, 2, 2, 2)), rng0.standard_normal((1, 3, 2, 2))
    bt = T(b0)
    assert grad_check(lambda a: sum_all(F.channel_concat([a, bt])), a0) < 1e-9


def test_channel_stats_examples():
    mean, std = F.channel_stats(T(np.full((1, 1, 3, 3), 0.7)))
    assert np.isclose(mean.data.item(), 0.7) and std.data.item() == 0.0
    mean, std = F.channel_stats(T(np.array([[0.0, 2.0], [0.0, 2.0]]).reshape(1, 1, 2, 2)))
    assert mean.data.item() == 1.0 and std.data.item() == 1.0
    m, s = F.channel_stats(T(np.ones((2, 50, 8, 8))))
    assert m.shape == s.shape == (2, 50, 1, 1)


def test_channel_stats_constant_has_zero_std_grad():
    x = T(np.full((1, 1, 3, 3), 2.0))
    x.requires_grad = True
    _, std = F.channel_stats(x)
    sum_all(std).backward()
    assert np.all(x.grad == 0)


# -- parameter-count invariants and gradient certification -------------------


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.sampled_from([1, 3, 5]), st.integers(1, 4), st.integers(1, 6))
def test_param_count_closed_forms(cin, cout, k, g, r):
    cin, cout = cin * g, cout * g
    assert nn.Conv2d(cin, cout, k, groups=g).num_params() == nn.Conv2d.param_count(cin, cout, k, g)
    assert nn.BSConv(cin, cout, k).num_params() == cin * cout + cout * k * k + cout
    hidden = max(1, cin // r)
    inv = nn.Involution(cin, k, g, r)
    assert inv.num_params() == cin * hidden + hidden + hidden * k * k * g + k * k * g


@pytest.mark.parametrize("name", ["conv2d", "depthwise", "bsconv", "involution", "involution_apply",
                                  "unfold", "batch_norm", "activations", "pixel_shuffle", "concat",
                                  "channel_stats"])
def test_op_gradients_certified(name):
    # the module-level contract is 1e-5 for the primitive ops
    result = REGISTRY[name](0, 1e-4)
    assert result.error < 1e-5 and result.skipped == 0


def test_fd_check_skips_kink_crossings():
    # x = 0 straddles the leaky_relu kink; the coordinate must be skipped, not compared
    x = np.array([0.0, 1.0])
    g = np.array([1.0, 1.0])
    xt = Tensor(x)
    err, checked, skipped, _ = fd_check(lambda: sum_all(F.leaky_relu(xt, 0.05)), [(x, g)], 1e-4)
    assert skipped == 1 and checked == 1 and err < 1e-9


def test_module_gradient_through_weights():
    conv = nn.init_weights(nn.Conv2d(2, 3, 3), 0).astype(np.float64)
    x = T(rng0.standard_normal((1, 2, 4, 4)))
    r = T(rng0.standard_normal((1, 3, 4, 4)))
    w0 = conv.weight.data.copy()

    def f(w):
        return sum_all(mul(F.conv2d(x, w, conv.bias), r))

    assert grad_check(f, w0) < 1e-8
