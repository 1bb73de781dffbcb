"""Procedural HR images for desk-scale training and tests.

Each image is a smooth colour gradient overlaid with antialiased ellipses,
rotated rectangles, thin bars and sinusoidal gratings, which gives the edge
and texture content bicubic upscaling blurs.
"""
from __future__ import annotations

import os

import numpy as np

from .errors import TooSmallError
from .pipeline import ImageRGB, save_image

MIN_SIDE = 20  # shape size ranges assume at least this much room


def _coverage(signed_dist: np.ndarray) -> np.ndarray:
    # one-pixel antialiasing ramp around the boundary
    return np.clip(0.5 - signed_dist, 0.0, 1.0)


def generate_image(height: int, width: int, seed: int) -> ImageRGB:
    if min(height, width) < MIN_SIDE:
        raise TooSmallError(f"synthetic images need sides >= {MIN_SIDE}, got {width}x{height}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

    c0, c1 = rng.uniform(0.1, 0.9, size=(2, 3))
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx / width + np.sin(theta) * yy / height + 1) / 2
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp

    for _ in range(int(rng.integers(6, 12))):
        colour = rng.uniform(0, 1, size=3)[:, None, None]
        kind = rng.integers(0, 4)
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        if kind == 0:
            ry, rx = rng.uniform(4, height / 3), rng.uniform(4, width / 3)
            r = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
            mask = _coverage((r - 1.0) * min(ry, rx))
        elif kind == 1:
            a = rng.uniform(0, np.pi)
            u = np.cos(a) * (xx - cx) + np.sin(a) * (yy - cy)
            v = -np.sin(a) * (xx - cx) + np.cos(a) * (yy - cy)
            hu, hv = rng.uniform(3, width / 3), rng.uniform(3, height / 3)
            mask = _coverage(np.maximum(np.abs(u) - hu, np.abs(v) - hv))
        elif kind == 2:
            a = rng.uniform(0, np.pi)
            u = np.cos(a) * (xx - cx) + np.sin(a) * (yy - cy)
            mask = _coverage(np.abs(u) - rng.uniform(0.8, 2.5))
        else:
            a = rng.uniform(0, np.pi)
            period = rng.uniform(5, 16)
            u = np.cos(a) * xx + np.sin(a) * yy
            region = _coverage(np.hypot(yy - cy, xx - cx) - rng.uniform(10, min(height, width) / 2))
            mask = region * (0.5 + 0.5 * np.sin(2 * np.pi * u / period))
        img = img * (1 - mask) + colour * mask
    return ImageRGB(np.clip(img, 0, 1).astype(np.float32))


def write_dataset(directory, count: int, seed: int, min_size: int = 96,
                  max_size: int = 128, prefix: str = "img") -> list:
    """Write ``count`` PNGs with side lengths in [min_size, max_size]."""
    os.makedirs(directory, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        h, w = (int(v) for v in rng.integers(min_size, max_size + 1, size=2))
        path = os.path.join(directory, f"{prefix}_{i:03d}.png")
        save_image(generate_image(h, w, int(rng.integers(2 ** 31))), path)
        paths.append(path)
    return paths
