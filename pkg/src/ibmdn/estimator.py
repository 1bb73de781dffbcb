"""scikit-learn style wrappers around the network and the bicubic baseline.

Inputs are sequences of images: ``ImageRGB``, H x W x 3 arrays (uint8 or
float in [0, 1]) or PNG paths. ``fit`` takes HR images and degrades them
itself; ``predict`` takes LR images and returns H*s x W*s x 3 float32 arrays.
"""
from __future__ import annotations

import os

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .arch import ModelSpec, build_ibmdn, forward_sr
from .errors import EmptyDatasetError, InvalidConfigError
from .metrics import psnr_y
from .pipeline import ImageRGB, bicubic_upscale, load_image, make_lr


def check_images(X, min_size: int = 1) -> list:
    """Coerce a sequence of images to a list of ``ImageRGB``."""
    if isinstance(X, (ImageRGB, np.ndarray, str, os.PathLike)):
        raise InvalidConfigError("expected a sequence of images, not a single image")
    out = []
    for item in X:
        if isinstance(item, ImageRGB):
            img = item
        elif isinstance(item, (str, os.PathLike)):
            img = load_image(item)
        else:
            arr = np.asarray(item)
            if arr.dtype != np.uint8:
                arr = arr.astype(np.float32)
                if not np.isfinite(arr).all():
                    raise InvalidConfigError("image contains non-finite values")
            img = ImageRGB.from_array(arr)
        if img.height < min_size or img.width < min_size:
            raise InvalidConfigError(f"{img.width}x{img.height} image is smaller than {min_size}px")
        out.append(img)
    if not out:
        raise EmptyDatasetError("no images given")
    return out


def _check_scale(scale):
    if scale not in (2, 3, 4):
        raise InvalidConfigError(f"scale must be 2, 3 or 4, got {scale}")


class _SRScoreMixin:
    def score(self, X, y=None):
        """Mean Y-PSNR (shave = scale) of the reconstructions of bicubic-degraded ``X``."""
        hr_images = check_images(X, min_size=self.scale)
        pairs = [make_lr(img, self.scale) for img in hr_images]
        preds = self.predict([lr for _, lr in pairs])
        return float(np.mean([psnr_y(ImageRGB.from_array(p), hr, self.scale)
                              for p, (hr, _) in zip(preds, pairs)]))


class BicubicDegrader(TransformerMixin, BaseEstimator):
    """HR images -> bicubic LR images (H//s x W//s x 3 float32)."""

    def __init__(self, scale=2):
        self.scale = scale

    def fit(self, X=None, y=None):
        _check_scale(self.scale)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        _check_scale(self.scale)
        return [make_lr(img, self.scale)[1].to_array() for img in check_images(X, self.scale)]


class BicubicUpscaler(_SRScoreMixin, RegressorMixin, BaseEstimator):
    """The interpolation baseline, with the same interface as the network."""

    def __init__(self, scale=2):
        self.scale = scale

    def fit(self, X=None, y=None):
        _check_scale(self.scale)
        self.is_fitted_ = True
        return self

    def predict(self, X):
        check_is_fitted(self)
        return [bicubic_upscale(img, self.scale).to_array() for img in check_images(X)]


class IBMDNSuperResolver(_SRScoreMixin, RegressorMixin, BaseEstimator):
    """Trains the distillation network on HR images and super-resolves LR ones."""

    def __init__(self, scale=2, nf=50, nd=25, n_blocks=6, iters=1000, batch=16, patch=192,
                 lr0=2e-4, seed=0, augment=True, verbose=False):
        self.scale = scale
        self.nf = nf
        self.nd = nd
        self.n_blocks = n_blocks
        self.iters = iters
        self.batch = batch
        self.patch = patch
        self.lr0 = lr0
        self.seed = seed
        self.augment = augment
        self.verbose = verbose

    def _spec(self) -> ModelSpec:
        return ModelSpec(scale=self.scale, nf=self.nf, nd=self.nd, n_blocks=self.n_blocks)

    def fit(self, X, y=None):
        from .train import TrainConfig, fit

        spec = self._spec()
        cfg = TrainConfig(lr0=self.lr0, batch=self.batch, hr_patch=self.patch, iters=self.iters,
                          seed=self.seed, augment=self.augment)
        cfg.validate(spec.scale)
        images = check_images(X, min_size=self.patch)
        pairs = [(f"image_{i}", *make_lr(img, spec.scale)) for i, img in enumerate(images)]
        model = build_ibmdn(spec, seed=self.seed)
        report = fit(model, pairs, cfg, log=print if self.verbose else (lambda line: None))
        self.model_ = model
        self.loss_curve_ = list(report.losses)
        self.n_iter_ = report.iterations
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return [forward_sr(self.model_, img.to_batch())[0].transpose(1, 2, 0)
                for img in check_images(X)]
