"""Image I/O, colour conversion, bicubic degradation and patch sampling."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import InvalidConfigError, InvalidShapeError, TooSmallError, UnsupportedFormatError

_Y_WEIGHTS = np.array([65.481, 128.553, 24.966])


@dataclass
class ImageRGB:
    """Three float32 planes in [0, 1], shape (3, height, width)."""

    planes: np.ndarray

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float32)
        if planes.ndim != 3 or planes.shape[0] != 3 or min(planes.shape[1:]) < 1:
            raise InvalidShapeError(f"expected planes of shape (3, H, W), got {planes.shape}")
        self.planes = planes

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @classmethod
    def from_array(cls, arr) -> "ImageRGB":
        """From an H x W x 3 (or H x W) array, uint8 or float in [0, 1]."""
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvalidShapeError(f"expected H x W x 3, got {arr.shape}")
        if arr.dtype == np.uint8:
            arr = arr.astype(np.float32) / 255.0
        return cls(np.ascontiguousarray(arr.transpose(2, 0, 1)))

    def to_array(self) -> np.ndarray:
        """H x W x 3 float32."""
        return np.ascontiguousarray(self.planes.transpose(1, 2, 0))

    def to_batch(self) -> np.ndarray:
        """(1, 3, H, W) float32, ready for the network."""
        return self.planes[None].copy()

    def crop(self, top: int, left: int, height: int, width: int) -> "ImageRGB":
        return ImageRGB(self.planes[:, top:top + height, left:left + width].copy())


def load_image(path) -> ImageRGB:
    """Read an 8-bit RGB or grayscale PNG; grayscale is replicated to 3 planes."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such image: {path}")
    with Image.open(path) as im:
        if im.format != "PNG":
            raise UnsupportedFormatError(f"{path}: only PNG is supported, got {im.format}")
        if im.mode == "P":
            im = im.convert("RGB")
        if im.mode not in ("RGB", "L"):
            raise UnsupportedFormatError(f"{path}: unsupported PNG mode {im.mode!r}")
        arr = np.asarray(im, dtype=np.uint8)
    return ImageRGB.from_array(arr)


def quantize(planes: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and map to uint8 with round-half-up."""
    return np.floor(np.clip(planes, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: ImageRGB, path) -> None:
    planes = img.planes if isinstance(img, ImageRGB) else np.asarray(img)
    if not np.isfinite(planes).all():
        raise ValueError("cannot save an image with non-finite samples")
    Image.fromarray(quantize(planes).transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def rgb_to_y(img) -> np.ndarray:
    """BT.601 studio-swing luma in [16/255, 235/255], float64 (H, W)."""
    planes = img.planes if isinstance(img, ImageRGB) else np.asarray(img)
    planes = planes.astype(np.float64)
    return 16.0 / 255.0 + np.tensordot(_Y_WEIGHTS, planes, axes=1) / 255.0


# ---------------------------------------------------------------------------
# bicubic resampling


def cubic(t):
    """Keys cubic convolution kernel with a = -0.5."""
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    return ((1.5 * t3 - 2.5 * t2 + 1.0) * (t <= 1)
            + (-0.5 * t3 + 2.5 * t2 - 4.0 * t + 2.0) * ((t > 1) & (t <= 2)))


def resize_weights(in_len: int, out_len: int) -> np.ndarray:
    """Dense (out_len, in_len) interpolation matrix along one axis.

    Follows the imresize contribution rule: output sample i (1-based) maps to
    u = i / scale + 0.5 * (1 - 1 / scale); on downscale the kernel is
    stretched by 1 / scale. Rows are normalised to sum to one, and taps that
    fall outside [0, in_len) are folded back by symmetric reflection.
    """
    scale = out_len / in_len
    width = 4.0
    if scale < 1:
        kernel = lambda t: scale * cubic(scale * t)  # noqa: E731
        width = width / scale
    else:
        kernel = cubic
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1.0 - 1.0 / scale)
    left = np.floor(u - width / 2.0)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kernel(u[:, None] - idx)
    w /= w.sum(axis=1, keepdims=True)

    # 1-based positions -> 0-based with symmetric edge reflection
    mirror = np.concatenate([np.arange(in_len), np.arange(in_len - 1, -1, -1)])
    src = mirror[np.mod(idx.astype(np.int64) - 1, 2 * in_len)]
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, src.ravel()), w.ravel())
    return mat


def bicubic_resize(img: ImageRGB, out_w: int, out_h: int) -> ImageRGB:
    """Antialiased bicubic resize, width pass then height pass, per channel."""
    if out_w < 1 or out_h < 1:
        raise InvalidShapeError(f"output size must be >= 1, got {out_w}x{out_h}")
    planes = img.planes.astype(np.float64)
    wx = resize_weights(img.width, out_w)
    wy = resize_weights(img.height, out_h)
    tmp = planes @ wx.T
    out = np.einsum("oh,chw->cow", wy, tmp)
    return ImageRGB(out.astype(np.float32))


def make_lr(img: ImageRGB, scale: int) -> tuple[ImageRGB, ImageRGB]:
    """Crop HR to multiples of ``scale`` (top-left anchored), then downscale."""
    if scale not in (2, 3, 4):
        raise InvalidConfigError(f"scale must be 2, 3 or 4, got {scale}")
    if img.width < scale or img.height < scale:
        raise TooSmallError(f"{img.width}x{img.height} image is smaller than scale {scale}")
    h = img.height - img.height % scale
    w = img.width - img.width % scale
    hr = img.crop(0, 0, h, w)
    return hr, bicubic_resize(hr, w // scale, h // scale)


def bicubic_upscale(lr: ImageRGB, scale: int) -> ImageRGB:
    return bicubic_resize(lr, lr.width * scale, lr.height * scale)


# ---------------------------------------------------------------------------
# training patches


@dataclass
class PairedSample:
    hr: np.ndarray  # (3, p, p)
    lr: np.ndarray  # (3, p/s, p/s)
    source_id: str
    top_left: tuple  # HR coordinates (y, x)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_patch(hr: ImageRGB, lr: ImageRGB, p: int, scale: int, seed,
                 source_id: str = "") -> PairedSample:
    """Crop an aligned (p x p, p/s x p/s) pair at a random scale-aligned corner."""
    if p % scale:
        raise InvalidConfigError(f"patch size {p} not divisible by scale {scale}")
    if hr.height < p or hr.width < p:
        raise TooSmallError(f"{hr.width}x{hr.height} image is smaller than patch {p}")
    rng = _rng(seed)
    y = int(rng.integers(0, (hr.height - p) // scale + 1)) * scale
    x = int(rng.integers(0, (hr.width - p) // scale + 1)) * scale
    q = p // scale
    return PairedSample(
        hr=hr.planes[:, y:y + p, x:x + p].copy(),
        lr=lr.planes[:, y // scale:y // scale + q, x // scale:x // scale + q].copy(),
        source_id=source_id,
        top_left=(y, x),
    )


def augment(sample: PairedSample, seed=None, flip: bool | None = None,
            rotations: int | None = None) -> PairedSample:
    """Random horizontal flip and k * 90 degree rotation, applied to both patches.

    ``flip``/``rotations`` override the coin flips when given.
    """
    rng = _rng(seed)
    do_flip = bool(rng.integers(0, 2)) if flip is None else bool(flip)
    k = int(rng.integers(0, 4)) if rotations is None else int(rotations) % 4
    hr, lr = sample.hr, sample.lr
    if k % 2 and (hr.shape[1] != hr.shape[2] or lr.shape[1] != lr.shape[2]):
        raise InvalidShapeError("odd quarter-turns need square patches")
    if do_flip:
        hr, lr = hr[:, :, ::-1], lr[:, :, ::-1]
    if k:
        hr, lr = np.rot90(hr, k, axes=(1, 2)), np.rot90(lr, k, axes=(1, 2))
    return PairedSample(np.ascontiguousarray(hr), np.ascontiguousarray(lr),
                        sample.source_id, sample.top_left)


def list_images(directory) -> list:
    return sorted(os.path.join(directory, f) for f in os.listdir(directory)
                  if f.lower().endswith(".png"))
