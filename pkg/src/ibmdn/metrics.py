"""Y-channel PSNR / SSIM with border shaving, and directory evaluation reports."""
from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .errors import EmptyDatasetError, ShapeMismatchError, TooSmallError
from .pipeline import ImageRGB, bicubic_upscale, list_images, load_image, make_lr, rgb_to_y

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2


def _shaved_y(a, b, shave: int, min_side: int = 1):
    pa = a.planes if isinstance(a, ImageRGB) else np.asarray(a)
    pb = b.planes if isinstance(b, ImageRGB) else np.asarray(b)
    if pa.shape != pb.shape:
        raise ShapeMismatchError(f"image sizes differ: {pa.shape[1:]} vs {pb.shape[1:]}")
    if shave < 0:
        raise ValueError(f"shave must be >= 0, got {shave}")
    h, w = pa.shape[1:]
    if h - 2 * shave < min_side or w - 2 * shave < min_side:
        raise TooSmallError(f"{w}x{h} image leaves less than {min_side}px after shaving {shave}")
    ya = rgb_to_y(pa) * 255.0
    yb = rgb_to_y(pb) * 255.0
    if shave:
        ya = ya[shave:-shave, shave:-shave]
        yb = yb[shave:-shave, shave:-shave]
    return ya, yb


def psnr_y(a, b, shave: int = 0) -> float:
    """PSNR in dB on the [0, 255] Y channel, capped at 100 dB."""
    ya, yb = _shaved_y(a, b, shave)
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(255.0 ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 1-D Gaussian taps; the 2-D window is its outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    r = len(taps) // 2
    out = correlate1d(img, taps, axis=0, mode="constant")
    out = correlate1d(out, taps, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim_y(a, b, shave: int = 0) -> float:
    """Single-scale SSIM of the Y channel, averaged over the valid window region."""
    ya, yb = _shaved_y(a, b, shave, min_side=SSIM_WINDOW)
    if np.array_equal(ya, yb):
        return 1.0
    taps = gaussian_window()
    mu_a, mu_b = _filter_valid(ya, taps), _filter_valid(yb, taps)
    saa = _filter_valid(ya * ya, taps) - mu_a * mu_a
    sbb = _filter_valid(yb * yb, taps) - mu_b * mu_b
    sab = _filter_valid(ya * yb, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * sab + C2)
    den = (mu_a ** 2 + mu_b ** 2 + C1) * (saa + sbb + C2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)  # (name, psnr_db, ssim), sorted by name
    shave: int = 0
    scale: int = 1
    skipped: list = field(default_factory=list)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r[0])

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else float("nan")

    def table(self) -> str:
        width = max([len("name"), len("MEAN")] + [len(r[0]) for r in self.rows])
        lines = [f"{'name':<{width}}  {'psnr_db':>9}  {'ssim':>7}"]
        lines += [f"{n:<{width}}  {p:>9.4f}  {s:>7.5f}" for n, p, s in self.rows]
        lines.append(f"{'MEAN':<{width}}  {self.mean_psnr:>9.4f}  {self.mean_ssim:>7.5f}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "psnr_db", "ssim"])
            for n, p, s in self.rows:
                w.writerow([n, f"{p:.6f}", f"{s:.6f}"])
            w.writerow(["MEAN", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}"])


def default_csv_path(hr_dir) -> str:
    """``<dir>_metrics.csv`` beside the evaluated directory."""
    return os.path.normpath(os.path.abspath(hr_dir)) + "_metrics.csv"


def evaluate_dir(model, hr_dir, scale: int, identity: bool = False,
                 csv_path=None) -> MetricReport:
    """Score a model on every PNG in ``hr_dir`` with shave = scale.

    ``model`` is an IBMDN, a checkpoint path, the string ``"bicubic"`` for the
    interpolation baseline, or ignored when ``identity`` is set (HR is compared
    with itself, a self-test of the metric path). ``csv_path=False`` skips the CSV.
    """
    from .arch import forward_sr
    from .checkpoint import load_checkpoint

    paths = list_images(hr_dir)
    if not paths:
        raise EmptyDatasetError(f"{hr_dir}: no PNG images")
    if not identity and isinstance(model, (str, os.PathLike)) and model != "bicubic":
        model = load_checkpoint(model)
    if not identity and model != "bicubic" and model.spec.scale != scale:
        raise ShapeMismatchError(f"model is x{model.spec.scale}, evaluation asked for x{scale}")

    rows, skipped = [], []
    for path in paths:
        name = os.path.basename(path)
        try:
            img = load_image(path)
            hr, lr = make_lr(img, scale)
        except (OSError, ValueError) as exc:
            warnings.warn(f"skipping {name}: {exc}")
            skipped.append(name)
            continue
        if identity:
            sr = hr
        elif model == "bicubic":
            sr = bicubic_upscale(lr, scale)
        else:
            sr = ImageRGB(forward_sr(model, lr.to_batch())[0])
        rows.append((name, psnr_y(sr, hr, scale), ssim_y(sr, hr, scale)))
    if not rows:
        raise EmptyDatasetError(f"{hr_dir}: no readable images")
    report = MetricReport(rows, shave=scale, scale=scale, skipped=skipped)
    if csv_path is not False:
        report.write_csv(csv_path or default_csv_path(hr_dir))
    return report
