"""MAE loss, ADAM with step-halving schedule, and the training loop."""
from __future__ import annotations

import sys
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .arch import IBMDN, ModelSpec, build_ibmdn
from .checkpoint import save_checkpoint
from .errors import (
    EmptyDatasetError,
    EmptyGradError,
    InvalidConfigError,
    NumericFaultError,
    ShapeMismatchError,
)
from .pipeline import augment, list_images, load_image, make_lr, sample_patch
from .tensor import Tensor, check_finite, make_op


@dataclass
class TrainConfig:
    lr0: float = 2e-4
    halve_every: int = 200_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch: int = 16
    hr_patch: int = 192
    iters: int = 1000
    seed: int = 0
    augment: bool = True
    report_every: int = 100

    def validate(self, scale: int) -> None:
        if self.lr0 <= 0:
            raise InvalidConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.batch < 1:
            raise InvalidConfigError(f"batch must be >= 1, got {self.batch}")
        if self.iters < 0:
            raise InvalidConfigError(f"iters must be >= 0, got {self.iters}")
        if self.halve_every < 1:
            raise InvalidConfigError("halve_every must be >= 1")
        if self.hr_patch < scale or self.hr_patch % scale:
            raise InvalidConfigError(
                f"hr_patch {self.hr_patch} must be a positive multiple of scale {scale}")


def mae_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error; the subgradient at a tie is 0."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ShapeMismatchError(f"pred {pred.shape} vs target {t.shape}")
    diff = pred.data - t
    n = diff.size
    sign = np.sign(diff)
    value = np.array([np.abs(diff).sum(dtype=np.float64) / n], dtype=pred.dtype)
    return make_op(value, (pred,), lambda g: (sign * (g.reshape(()) / n),), "mae_loss")


def weighted_loss(pred: Tensor, target, terms=((1.0, mae_loss),)) -> Tensor:
    """Sum of ``weight * fn(pred, target)`` over ``terms``."""
    total = None
    for weight, fn in terms:
        term = fn(pred, target) * float(weight)
        total = term if total is None else total + term
    return total


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * 0.5 ** (iteration // cfg.halve_every)


class AdamState:
    """Per-parameter first/second moments (created on first use) and step count."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def moments(self, p):
        key = id(p)
        if key not in self.m:
            self.m[key] = np.zeros_like(p.data)
            self.v[key] = np.zeros_like(p.data)
        return self.m[key], self.v[key]


def adam_step(params, state: AdamState, lr: float) -> None:
    """One bias-corrected ADAM update over the trainable ``params``."""
    params = [p for p in params if p.trainable]
    if not any(p.has_grad for p in params):
        raise EmptyGradError("adam_step called before any gradient was accumulated")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        m, v = state.moments(p)
        g = p.grad
        check_finite(g, f"gradient of {p.name or 'parameter'}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()
        p.has_grad = False


@dataclass
class TrainReport:
    iterations: int
    losses: list = field(default_factory=list)
    log_lines: list = field(default_factory=list)
    seconds: float = 0.0
    checkpoint: str | None = None

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def load_training_pairs(hr_dir, scale: int, min_size: int) -> list:
    """(name, hr_cropped, lr) for every readable PNG at least ``min_size`` square."""
    pairs = []
    for path in list_images(hr_dir):
        try:
            img = load_image(path)
        except OSError as exc:
            warnings.warn(f"skipping {path}: {exc}")
            continue
        if img.width < min_size or img.height < min_size:
            warnings.warn(f"skipping {path}: smaller than {min_size}px")
            continue
        hr, lr = make_lr(img, scale)
        pairs.append((path, hr, lr))
    return pairs


def sample_batch(pairs, cfg: TrainConfig, scale: int, rng: np.random.Generator):
    """Draw ``cfg.batch`` (image, patch) pairs i.i.d.; returns (lr, hr) arrays."""
    lrs, hrs = [], []
    for _ in range(cfg.batch):
        name, hr, lr = pairs[int(rng.integers(len(pairs)))]
        sample = sample_patch(hr, lr, cfg.hr_patch, scale, rng, source_id=name)
        if cfg.augment:
            sample = augment(sample, rng)
        lrs.append(sample.lr)
        hrs.append(sample.hr)
    return np.stack(lrs), np.stack(hrs)


def fit(model: IBMDN, pairs, cfg: TrainConfig, log=None) -> TrainReport:
    """Run ``cfg.iters`` optimisation steps on pre-degraded (name, hr, lr) pairs."""
    scale = model.spec.scale
    cfg.validate(scale)
    if not pairs:
        raise EmptyDatasetError("no usable training images")
    log = log or (lambda line: print(line, file=sys.stdout, flush=True))
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters(trainable_only=True)
    state = AdamState(cfg.beta1, cfg.beta2, cfg.eps_adam)
    report = TrainReport(iterations=cfg.iters)
    model.train()
    start = time.perf_counter()
    window = []
    for it in range(cfg.iters):
        lr_batch, hr_batch = sample_batch(pairs, cfg, scale, rng)
        try:
            loss = mae_loss(model(Tensor(lr_batch)), hr_batch)
            loss.backward()
            adam_step(params, state, lr_at(it, cfg))
        except NumericFaultError as exc:
            raise NumericFaultError(f"iteration {it}: {exc}") from exc
        zero_grads(params)
        value = loss.item()
        report.losses.append(value)
        window.append(value)
        if (it + 1) % cfg.report_every == 0 or it + 1 == cfg.iters:
            line = f"iter={it + 1} lr={lr_at(it, cfg):.6g} loss={np.mean(window):.6f}"
            report.log_lines.append(line)
            log(line)
            window = []
    report.seconds = time.perf_counter() - start
    return report


def train_loop(spec: ModelSpec, cfg: TrainConfig, hr_dir, out, log=None) -> TrainReport:
    """Train a fresh model on a directory of HR PNGs and save the final checkpoint."""
    cfg.validate(spec.scale)
    pairs = load_training_pairs(hr_dir, spec.scale, cfg.hr_patch)
    if not pairs:
        raise EmptyDatasetError(f"{hr_dir}: no PNG at least {cfg.hr_patch}px in both dimensions")
    model = build_ibmdn(spec, seed=cfg.seed)
    report = fit(model, pairs, cfg, log)
    save_checkpoint(model, out)
    report.checkpoint = str(out)
    return report
