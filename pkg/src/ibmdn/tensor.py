"""Dense tensors with reverse-mode differentiation.

Every differentiable operation records its parents and a backward rule
``grad_out -> tuple of parent grads``. Nodes get a monotonically
increasing ``node_id`` at creation, so sorting reachable nodes by id gives
a valid topological order for the backward sweep.
"""
from __future__ import annotations

import contextlib
import itertools
import warnings

import numpy as np

from .errors import (
    InvalidShapeError,
    NotScalarError,
    NumericFaultError,
    ShapeMismatchError,
    UnsupportedKernelError,
)

_node_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional array node. Feature maps use the N x C x H x W layout."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(s < 1 for s in arr.shape):
            raise InvalidShapeError(f"all extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = next(_node_counter)
        self._parents: tuple = ()
        self._backward = None

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalarError(f"item() needs one element, tensor has {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    # -- reverse mode -------------------------------------------------------
    def backward(self) -> bool:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Returns False (with a warning) when the tensor is detached from any
        graph; gradients are then left untouched.
        """
        if self.data.size != 1:
            raise NotScalarError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            warnings.warn("backward() on a tensor with no recorded graph; nothing to do",
                          RuntimeWarning, stacklevel=2)
            return False

        nodes = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t.node_id in nodes:
                continue
            nodes[t.node_id] = t
            stack.extend(p for p in t._parents if p.requires_grad)

        pending = {self.node_id: np.ones_like(self.data)}
        for nid in sorted(nodes, reverse=True):
            t = nodes[nid]
            g = pending.pop(nid, None)
            if g is None:
                continue
            if t._backward is None:
                t._accumulate(g)
                continue
            for p, pg in zip(t._parents, t._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                prev = pending.get(p.node_id)
                pending[p.node_id] = pg if prev is None else prev + pg
        return True

    def _accumulate(self, g: np.ndarray) -> None:
        g = g.astype(self.data.dtype, copy=False).reshape(self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, copy=True)
        else:
            self.grad += g


class Parameter(Tensor):
    """Named learnable tensor; ``grad`` is a preallocated buffer of zeros."""

    def __init__(self, data, name: str = "", trainable: bool = True, dtype=np.float32):
        super().__init__(np.array(data, dtype=dtype, copy=True), requires_grad=trainable)
        self.name = name
        self.trainable = bool(trainable)
        self.grad = np.zeros_like(self.data)
        self.has_grad = False

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def _accumulate(self, g: np.ndarray) -> None:
        self.grad += g.reshape(self.data.shape)
        self.has_grad = True

    def set_dtype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={self.shape}, trainable={self.trainable})"


# ---------------------------------------------------------------------------
# graph recording helpers


def check_finite(data: np.ndarray, what: str = "operation") -> None:
    # a finite sum implies finite entries; the full scan only runs on failure
    if not np.isfinite(data.sum()) and not np.isfinite(data).all():
        raise NumericFaultError(f"{what} produced NaN/Inf")


def make_op(data: np.ndarray, parents, backward, name: str = "operation") -> Tensor:
    """Wrap ``data`` as the output of an op with the given backward rule.

    ``backward(grad_out)`` must return one gradient (or None) per parent.
    """
    check_finite(data, name)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node_id = next(_node_counter)
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _as_tensor(x, dtype=np.float32) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True).reshape(shape)


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if len(a) != len(b):
        raise ShapeMismatchError(f"cannot combine shapes {a} and {b}")
    out = []
    for x, y in zip(a, b):
        if x != y and x != 1 and y != 1:
            raise ShapeMismatchError(f"cannot combine shapes {a} and {b}")
        out.append(max(x, y))
    return tuple(out)


# ---------------------------------------------------------------------------
# construction


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(_check_shape(shape), dtype=dtype))


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(_check_shape(shape), dtype=dtype))


def full(shape, value: float, dtype=np.float32) -> Tensor:
    return Tensor(np.full(_check_shape(shape), value, dtype=dtype))


def seeded_uniform(shape, lo: float, hi: float, seed: int, dtype=np.float32) -> Tensor:
    """Uniform samples on [lo, hi); identical (shape, seed) give identical bytes."""
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(lo, hi, size=_check_shape(shape)).astype(dtype))


def _check_shape(shape) -> tuple:
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise InvalidShapeError(f"shape must be nonempty with extents >= 1, got {shape}")
    return shape


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    if b.size == 1 and a.size != 1 and b.ndim <= 1:
        return make_op(a.data + b.data[0], (a, b),
                       lambda g: (g, np.sum(g).reshape(1)), "add")
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)), "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    if b.size == 1 and a.size != 1 and b.ndim <= 1:
        return make_op(a.data - b.data[0], (a, b),
                       lambda g: (g, -np.sum(g).reshape(1)), "sub")
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    ad, bd = a.data, b.data
    if b.size == 1 and a.size != 1 and b.ndim <= 1:
        s = bd[0]
        return make_op(ad * s, (a, b),
                       lambda g: (g * s, np.sum(g * ad).reshape(1)), "mul")
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_op(ad * bd, (a, b),
                   lambda g: (_reduce_to(g * bd, sa), _reduce_to(g * ad, sb)), "mul")


def sum_all(x: Tensor) -> Tensor:
    shape, dtype = x.shape, x.dtype
    return make_op(np.sum(x.data, dtype=dtype).reshape(1), (x,),
                   lambda g: (np.broadcast_to(g.reshape(()), shape).astype(dtype),), "sum")


def mean_all(x: Tensor) -> Tensor:
    shape, dtype, n = x.shape, x.dtype, x.size
    return make_op((np.sum(x.data, dtype=dtype) / n).reshape(1), (x,),
                   lambda g: (np.full(shape, g.reshape(())[()] / n, dtype=dtype),), "mean")


# ---------------------------------------------------------------------------
# views


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size or any(s < 1 for s in shape):
        raise InvalidShapeError(f"cannot reshape {x.shape} into {shape}")
    old = x.shape
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise InvalidShapeError(f"{axes} is not a permutation of {x.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return make_op(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (np.ascontiguousarray(g.transpose(inverse)),), "permute")


# ---------------------------------------------------------------------------
# neighbourhood gathering


def im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*k*k, Ho*Wo), rows ordered (c, dy, dx)."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    # win: (N, C, Ho, Wo, k, k) -> (N, C, k, k, Ho, Wo)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, ho * wo)


def col2im(cols: np.ndarray, shape: tuple, k: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto the input grid."""
    n, c, h, w = shape
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    cols = cols.reshape(n, c, k, k, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            xp[:, :, dy:dy + ho, dx:dx + wo] += cols[:, :, dy, dx]
    if pad:
        return xp[:, :, pad:pad + h, pad:pad + w]
    return xp


def check_kernel(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise UnsupportedKernelError(f"only odd kernel sizes are supported, got {k}")


def unfold(x: Tensor, k: int, pad: int) -> Tensor:
    """Gather k x k zero-padded neighbourhoods: (N,C,H,W) -> (N, C*k^2, Ho*Wo)."""
    check_kernel(k)
    if pad < 0:
        raise InvalidShapeError(f"pad must be >= 0, got {pad}")
    if x.ndim != 4:
        raise InvalidShapeError(f"unfold expects a 4-D tensor, got {x.shape}")
    if x.shape[2] + 2 * pad < k or x.shape[3] + 2 * pad < k:
        raise InvalidShapeError(f"kernel {k} larger than padded input {x.shape}")
    shape = x.shape
    return make_op(im2col(x.data, k, pad), (x,),
                   lambda g: (col2im(g, shape, k, pad),), "unfold")


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(fn, x0, eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps a Tensor to a scalar Tensor. Everything runs in float64; the
    closure is responsible for keeping any captured weights in float64 too.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    base = np.array(x0.data if isinstance(x0, Tensor) else x0, dtype=np.float64)
    if not np.isfinite(base).all():
        raise ValueError("x0 must be finite")

    x = Tensor(base.copy(), requires_grad=True)
    out = fn(x)
    if out.size != 1:
        raise NotScalarError(f"closure must return a scalar, got shape {out.shape}")
    out.backward()
    analytic = np.zeros_like(base) if x.grad is None else x.grad.astype(np.float64)

    numeric = np.empty_like(base)
    flat = base.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn(Tensor(base.copy())).item()
            flat[i] = orig - eps
            fm = fn(Tensor(base.copy())).item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
