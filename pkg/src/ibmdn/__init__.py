"""Lightweight single-image super-resolution with involution and blueprint
separable convolutions, on a small numpy autograd engine."""
from .arch import IBMDN, ModelSpec, build_ibmdn, count_params, forward_sr
from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import evaluate_dir, psnr_y, ssim_y
from .pipeline import ImageRGB, bicubic_resize, load_image, make_lr, save_image
from .tensor import Parameter, Tensor, grad_check, no_grad
from .train import TrainConfig, train_loop

__version__ = "0.1.0"

__all__ = [
    "IBMDN", "ModelSpec", "build_ibmdn", "count_params", "forward_sr", "load_checkpoint",
    "save_checkpoint", "evaluate_dir", "psnr_y", "ssim_y", "ImageRGB", "bicubic_resize",
    "load_image", "make_lr", "save_image", "Parameter", "Tensor", "grad_check", "no_grad",
    "TrainConfig", "train_loop",
]
