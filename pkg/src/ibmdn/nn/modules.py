"""Stateful layers holding named parameters."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidConfigError
from ..tensor import Parameter, Tensor
from . import functional as F


class Module:
    """Container that registers Parameter and Module attributes in order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self):
        return self._modules.items()

    def named_parameters(self, prefix: str = "", trainable_only: bool = False):
        """Yield (dotted name, Parameter) depth-first in registration order."""
        for name, p in self._params.items():
            if trainable_only and not p.trainable:
                continue
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".", trainable_only)

    def parameters(self, trainable_only: bool = True):
        return [p for _, p in self.named_parameters(trainable_only=trainable_only)]

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def assign_names(self) -> "Module":
        for name, p in self.named_parameters():
            p.name = name
        return self

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grads(self) -> None:
        for p in self.parameters(trainable_only=False):
            p.zero_grad()
            p.has_grad = False

    def astype(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (float64 for gradient checks)."""
        for p in self.parameters(trainable_only=False):
            p.set_dtype(dtype)
        return self

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters(trainable_only=True))


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._modules)), module)

    def __getitem__(self, i) -> Module:
        return list(self._modules.values())[i]

    def __len__(self):
        return len(self._modules)

    def __iter__(self):
        return iter(self._modules.values())


def init_weights(module: Module, seed: int) -> Module:
    """Uniform(-b, b), b = sqrt(1 / fan_in), for every 4-D weight; biases zeroed.

    Draws happen in parameter enumeration order from one seeded generator,
    so a given (architecture, seed) always yields the same bytes.
    """
    rng = np.random.default_rng(seed)
    for name, p in module.named_parameters():
        if not p.trainable:
            continue
        leaf = name.rsplit(".", 1)[-1]
        if p.ndim == 4:
            fan_in = p.shape[1] * p.shape[2] * p.shape[3]
            bound = np.sqrt(1.0 / fan_in)
            p.data[...] = rng.uniform(-bound, bound, size=p.shape)
        elif leaf == "bias" or leaf == "beta":
            p.data[...] = 0.0
        elif leaf == "gamma":
            p.data[...] = 1.0
    return module


class Conv2d(Module):
    """Stride-1 same-padded convolution with optional grouping."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 groups: int = 1, bias: bool = True):
        super().__init__()
        if groups < 1 or in_channels % groups or out_channels % groups:
            raise InvalidConfigError(
                f"groups={groups} must divide in={in_channels} and out={out_channels}")
        F.check_kernel(kernel_size)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.groups = groups
        self.pad = kernel_size // 2
        self.weight = Parameter(np.zeros((out_channels, in_channels // groups,
                                          kernel_size, kernel_size)))
        if bias:
            self.bias = Parameter(np.zeros(out_channels))
        else:
            object.__setattr__(self, "bias", None)

    @staticmethod
    def param_count(c_in: int, c_out: int, k: int, groups: int = 1, bias: bool = True) -> int:
        return c_out * (c_in // groups) * k * k + (c_out if bias else 0)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.groups)


class BSConv(Module):
    """Pointwise 1x1 (no bias) followed by a biased depthwise k x k."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        super().__init__()
        self.pw = Conv2d(in_channels, out_channels, 1, bias=False)
        self.dw = Conv2d(out_channels, out_channels, kernel_size, groups=out_channels)

    @staticmethod
    def param_count(c_in: int, c_out: int, k: int = 3) -> int:
        return c_in * c_out + c_out * k * k + c_out

    def forward(self, x: Tensor) -> Tensor:
        return F.bsconv(x, self.pw.weight, self.dw.weight, self.dw.bias)


class Involution(Module):
    """Channel-preserving involution with a 1x1 -> act -> 1x1 kernel generator."""

    def __init__(self, channels: int, kernel_size: int = 3, groups: int = 1,
                 reduction: int = 4, alpha: float = 0.05):
        super().__init__()
        if groups < 1 or channels % groups:
            raise InvalidConfigError(f"groups={groups} must divide channels={channels}")
        F.check_kernel(kernel_size)
        hidden = max(1, channels // reduction)
        self.kernel_size = kernel_size
        self.groups = groups
        self.alpha = alpha
        self.reduce = Conv2d(channels, hidden, 1)
        self.span = Conv2d(hidden, kernel_size * kernel_size * groups, 1)

    @staticmethod
    def param_count(c: int, k: int = 3, groups: int = 1, reduction: int = 4) -> int:
        hidden = max(1, c // reduction)
        return c * hidden + hidden + hidden * k * k * groups + k * k * groups

    def kernels(self, x: Tensor) -> Tensor:
        return F.involution_generate(x, self.reduce.weight, self.reduce.bias,
                                     self.span.weight, self.span.bias, self.alpha)

    def forward(self, x: Tensor) -> Tensor:
        return F.involution_apply(x, self.kernels(x), self.kernel_size, self.groups)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = Parameter(np.zeros(channels), trainable=False)
        self.running_var = Parameter(np.ones(channels), trainable=False)

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean.data,
                            self.running_var.data, self.training, self.momentum, self.eps)
