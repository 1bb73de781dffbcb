from . import functional
from .functional import (
    activation,
    batch_norm,
    bsconv,
    channel_concat,
    channel_slice,
    channel_stats,
    conv2d,
    involution_apply,
    involution_generate,
    leaky_relu,
    pixel_shuffle,
    pixel_unshuffle,
    relu,
    sigmoid,
)
from .modules import BatchNorm2d, BSConv, Conv2d, Involution, Module, ModuleList, init_weights

__all__ = [
    "functional", "activation", "batch_norm", "bsconv", "channel_concat", "channel_slice",
    "channel_stats", "conv2d", "involution_apply", "involution_generate", "leaky_relu",
    "pixel_shuffle", "pixel_unshuffle", "relu", "sigmoid", "BatchNorm2d", "BSConv", "Conv2d",
    "Involution", "Module", "ModuleList", "init_weights",
]
