"""Differentiable neural operators on N x C x H x W tensors.

All spatial operators run at stride 1 with ``pad = k // 2`` so spatial size
is preserved.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import (
    DegenerateBatchError,
    InvalidConfigError,
    InvalidShapeError,
    ShapeMismatchError,
)
from ..tensor import Tensor, check_kernel, col2im, im2col, make_op

try:
    from . import _kernels
except ImportError:  # pragma: no cover - numba missing
    _kernels = None

_kink_log = None


@contextmanager
def record_kinks():
    """Collect the sign pattern of every activation input evaluated in the block.

    Finite-difference checks use it to spot perturbations that cross a kink.
    """
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def _require_4d(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise InvalidShapeError(f"{what} expects an N x C x H x W tensor, got {x.shape}")


def _shift_slices(k: int, h: int, w: int):
    for dy in range(k):
        for dx in range(k):
            yield dy * k + dx, (slice(None), slice(None), slice(dy, dy + h), slice(dx, dx + w))


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, groups: int = 1) -> Tensor:
    """Grouped cross-correlation with same padding.

    ``weight`` has shape (C_out, C_in / groups, k, k).
    """
    _require_4d(x, "conv2d")
    c_out, c_in_g, k, k2 = weight.shape
    if k != k2:
        raise InvalidShapeError(f"only square kernels are supported, got {k}x{k2}")
    check_kernel(k)
    if groups < 1 or c_out % groups:
        raise InvalidConfigError(f"groups={groups} must divide C_out={c_out}")
    n, c_in, h, w = x.shape
    if c_in % groups:
        raise InvalidConfigError(f"groups={groups} must divide C_in={c_in}")
    if c_in_g * groups != c_in:
        raise ShapeMismatchError(f"weight expects {c_in_g * groups} input channels, got {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeMismatchError(f"bias shape {bias.shape} does not match C_out={c_out}")

    pad = k // 2
    xd, wd = x.data, weight.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    if groups == 1 and k == 1:
        out, back = _conv_pointwise(xd, wd)
    elif groups == c_in == c_out:
        out, back = _conv_depthwise(xd, wd, pad)
    else:
        out, back = _conv_general(xd, wd, groups, pad)

    if bias is not None:
        out += bias.data.reshape(1, c_out, 1, 1)

        def backward(g):
            gx, gw = back(g)
            return gx, gw, g.sum(axis=(0, 2, 3))
    else:
        backward = back
    return make_op(out, parents, backward, "conv2d")


def _conv_pointwise(xd, wd):
    n, c_in, h, w = xd.shape
    c_out = wd.shape[0]
    xm = xd.reshape(n, c_in, h * w)
    wm = wd.reshape(c_out, c_in)
    out = np.matmul(wm, xm).reshape(n, c_out, h, w)

    def back(g):
        gm = g.reshape(n, c_out, h * w)
        gx = np.matmul(wm.T, gm).reshape(n, c_in, h, w)
        gw = np.matmul(gm, xm.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        return gx, gw

    return out, back


def _conv_depthwise(xd, wd, pad):
    n, c, h, w = xd.shape
    k = wd.shape[-1]
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    taps = np.ascontiguousarray(wd.reshape(c, k * k))
    out = np.zeros_like(xd)
    if _kernels is not None:
        _kernels.depthwise_forward(xp, taps, k, out)
    else:
        tmp = np.empty_like(xd)
        for j, sl in _shift_slices(k, h, w):
            np.multiply(xp[sl], taps[:, j].reshape(1, c, 1, 1), out=tmp)
            out += tmp

    def back(g):
        g = np.ascontiguousarray(g)
        gxp = np.zeros_like(xp)
        gw = np.zeros((c, k * k), dtype=xd.dtype)
        if _kernels is not None:
            _kernels.depthwise_backward(xp, taps, g, k, gxp, gw)
        else:
            for j, sl in _shift_slices(k, h, w):
                gw[:, j] = np.einsum("nchw,nchw->c", g, xp[sl])
                gxp[sl] += g * taps[:, j].reshape(1, c, 1, 1)
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx, gw.reshape(wd.shape)

    return out, back


def _conv_general(xd, wd, groups, pad):
    n, c_in, h, w = xd.shape
    c_out, c_in_g, k, _ = wd.shape
    c_out_g = c_out // groups
    cols = im2col(xd, k, pad).reshape(n, groups, c_in_g * k * k, h * w)
    wm = wd.reshape(groups, c_out_g, c_in_g * k * k)
    out = np.empty((n, groups, c_out_g, h * w), dtype=xd.dtype)
    for gi in range(groups):
        out[:, gi] = np.matmul(wm[gi], cols[:, gi])
    out = out.reshape(n, c_out, h, w)

    def back(g):
        gm = g.reshape(n, groups, c_out_g, h * w)
        gcols = np.empty_like(cols)
        gw = np.empty_like(wm)
        for gi in range(groups):
            gcols[:, gi] = np.matmul(wm[gi].T, gm[:, gi])
            gw[gi] = np.matmul(gm[:, gi], cols[:, gi].transpose(0, 2, 1)).sum(axis=0)
        gx = col2im(gcols.reshape(n, c_in * k * k, h * w), xd.shape, k, pad)
        return gx, gw.reshape(wd.shape)

    return out, back


def bsconv(x: Tensor, pw_weight: Tensor, dw_weight: Tensor, dw_bias: Tensor | None) -> Tensor:
    """Blueprint separable convolution: bias-free pointwise, then biased depthwise."""
    mid = conv2d(x, pw_weight)
    return conv2d(mid, dw_weight, dw_bias, groups=mid.shape[1])


# ---------------------------------------------------------------------------
# involution


def involution_generate(x: Tensor, reduce_w: Tensor, reduce_b: Tensor | None,
                        span_w: Tensor, span_b: Tensor | None, alpha: float = 0.05) -> Tensor:
    """Per-pixel kernels: span(leaky_relu(reduce(x))) -> (N, G*k*k, H, W)."""
    return conv2d(leaky_relu(conv2d(x, reduce_w, reduce_b), alpha), span_w, span_b)


def involution_apply(x: Tensor, kernels: Tensor, k: int, groups: int = 1) -> Tensor:
    """Apply pixel-specific kernels, shared by all channels inside a group."""
    _require_4d(x, "involution_apply")
    check_kernel(k)
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise InvalidConfigError(f"groups={groups} must divide C={c}")
    if kernels.shape != (n, groups * k * k, h, w):
        raise ShapeMismatchError(
            f"kernels shape {kernels.shape} != expected {(n, groups * k * k, h, w)}")
    pad = k // 2
    cg = c // groups
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))).reshape(
        n, groups, cg, h + 2 * pad, w + 2 * pad)
    kr = np.ascontiguousarray(kernels.data).reshape(n, groups, k * k, h, w)
    out = np.zeros((n, groups, cg, h, w), dtype=x.dtype)
    if _kernels is not None:
        _kernels.involution_forward(xp, kr, k, out)
    else:
        tmp = np.empty_like(out)
        for dy in range(k):
            for dx in range(k):
                j = dy * k + dx
                np.multiply(xp[:, :, :, dy:dy + h, dx:dx + w], kr[:, :, j, None], out=tmp)
                out += tmp

    def backward(g):
        gr = np.ascontiguousarray(g).reshape(n, groups, cg, h, w)
        gxp = np.zeros_like(xp)
        gk = np.zeros((n, groups, k * k, h, w), dtype=g.dtype)
        if _kernels is not None:
            _kernels.involution_backward(xp, kr, gr, k, gxp, gk)
        else:
            for dy in range(k):
                for dx in range(k):
                    j = dy * k + dx
                    xs = xp[:, :, :, dy:dy + h, dx:dx + w]
                    gk[:, :, j] = np.einsum("ngchw,ngchw->nghw", gr, xs)
                    gxp[:, :, :, dy:dy + h, dx:dx + w] += gr * kr[:, :, j, None]
        gx = gxp[..., pad:pad + h, pad:pad + w].reshape(n, c, h, w)
        return gx, gk.reshape(kernels.shape)

    return make_op(out.reshape(n, c, h, w), (x, kernels), backward, "involution_apply")


# ---------------------------------------------------------------------------
# sub-pixel rearrangement


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """(N, C*s^2, H, W) -> (N, C, H*s, W*s)."""
    _require_4d(x, "pixel_shuffle")
    n, cs, h, w = x.shape
    if s < 1 or cs % (s * s):
        raise InvalidShapeError(f"channels {cs} not divisible by {s}^2")
    c = cs // (s * s)
    out = x.data.reshape(n, c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * s, w * s)

    def backward(g):
        return (g.reshape(n, c, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(n, cs, h, w),)

    return make_op(np.ascontiguousarray(out), (x,), backward, "pixel_shuffle")


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """(N, C, H*s, W*s) -> (N, C*s^2, H, W); exact inverse of pixel_shuffle."""
    _require_4d(x, "pixel_unshuffle")
    n, c, hs, ws = x.shape
    if s < 1 or hs % s or ws % s:
        raise InvalidShapeError(f"spatial size {hs}x{ws} not divisible by {s}")
    h, w = hs // s, ws // s
    out = x.data.reshape(n, c, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * s * s, h, w)

    def backward(g):
        return (g.reshape(n, c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, hs, ws),)

    return make_op(np.ascontiguousarray(out), (x,), backward, "pixel_unshuffle")


# ---------------------------------------------------------------------------
# activations


def leaky_relu(x: Tensor, alpha: float = 0.05) -> Tensor:
    """x if x >= 0 else alpha * x; the derivative at 0 is taken as 1."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidConfigError(f"leaky_relu slope must lie in [0, 1], got {alpha}")
    a = x.dtype.type(alpha)
    out = np.maximum(x.data, a * x.data)
    mask = x.data >= 0
    if _kink_log is not None:
        _kink_log.append(mask)
    slope = mask.astype(x.dtype)
    slope *= 1 - a
    slope += a
    return make_op(out, (x,), lambda g: (g * slope,), "leaky_relu")


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    y = (0.5 * (np.tanh(0.5 * x.data) + 1.0)).astype(x.dtype)
    return make_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def activation(x: Tensor, kind: str = "leaky_relu", alpha: float = 0.05) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise InvalidConfigError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# normalisation and statistics


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalisation with population variance.

    In training mode ``running_mean``/``running_var`` are updated in place.
    """
    _require_4d(x, "batch_norm")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatchError(f"gamma/beta must have shape ({c},)")
    gd = gamma.data.reshape(1, c, 1, 1)

    if not training:
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(1, c, 1, 1)
        xhat = (x.data - running_mean.reshape(1, c, 1, 1).astype(x.dtype)) * inv_std
        out = xhat * gd + beta.data.reshape(1, c, 1, 1)

        def backward_eval(g):
            return (g * gd * inv_std, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3)))

        return make_op(out, (x, gamma, beta), backward_eval, "batch_norm")

    m = n * h * w
    if m < 2:
        raise DegenerateBatchError("batch_norm in training mode needs N*H*W >= 2")
    mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
    centred = x.data - mean
    var = (centred * centred).mean(axis=(0, 2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std
    out = xhat * gd + beta.data.reshape(1, c, 1, 1)

    running_mean *= 1.0 - momentum
    running_mean += momentum * mean.reshape(c)
    running_var *= 1.0 - momentum
    running_var += momentum * var.reshape(c)

    def backward(g):
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        dxhat = g * gd
        gx = (inv_std / m) * (m * dxhat
                              - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                              - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        return gx, ggamma, gbeta

    return make_op(out, (x, gamma, beta), backward, "batch_norm")


def channel_stats(x: Tensor) -> tuple[Tensor, Tensor]:
    """Per-channel spatial mean and population standard deviation, (N, C, 1, 1) each."""
    _require_4d(x, "channel_stats")
    n, c, h, w = x.shape
    hw = h * w
    mean = x.data.mean(axis=(2, 3), keepdims=True)
    centred = x.data - mean
    std = np.sqrt((centred * centred).mean(axis=(2, 3), keepdims=True))
    constant = x.data.max(axis=(2, 3), keepdims=True) == x.data.min(axis=(2, 3), keepdims=True)
    std[constant] = 0.0
    scale = np.divide(centred, hw * std, out=np.zeros_like(centred), where=std > 0)

    mean_t = make_op(mean, (x,), lambda g: (np.broadcast_to(g / hw, x.shape).copy(),), "channel_mean")
    std_t = make_op(std, (x,), lambda g: (g * scale,), "channel_std")
    return mean_t, std_t


# ---------------------------------------------------------------------------
# channel plumbing


def channel_concat(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise InvalidShapeError("channel_concat needs at least one tensor")
    for p in parts:
        _require_4d(p, "channel_concat")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeMismatchError(f"cannot concatenate {parts[0].shape} with {p.shape}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return make_op(np.concatenate([p.data for p in parts], axis=1), parts, backward, "channel_concat")


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Channels ``start:stop`` of x."""
    _require_4d(x, "channel_slice")
    if not 0 <= start < stop <= x.shape[1]:
        raise InvalidShapeError(f"invalid channel range {start}:{stop} for {x.shape[1]} channels")
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, start:stop] = g
        return (gx,)

    return make_op(np.ascontiguousarray(x.data[:, start:stop]), (x,), backward, "channel_slice")
