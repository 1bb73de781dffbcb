"""IBMDN: shallow extraction, depth-scheduled distillation blocks, fusion and
pixel-shuffle reconstruction."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidConfigError
from .nn import functional as F
from .nn.modules import BatchNorm2d, BSConv, Conv2d, Involution, Module, ModuleList, init_weights
from .tensor import Tensor, no_grad

ALPHA = 0.05
SUPPORTED_SCALES = (2, 3, 4)


class OperatorKind(str, Enum):
    BSCONV = "B"
    INVOLUTION = "I"


DEFAULT_SCHEDULE = ("BBB", "BBB", "BIB", "BIB", "IBI", "III")


def default_schedule(n_blocks: int) -> tuple:
    """The six-block schedule, stretched over ``n_blocks`` by relative depth."""
    if n_blocks < 1:
        raise InvalidConfigError(f"n_blocks must be >= 1, got {n_blocks}")
    if n_blocks == len(DEFAULT_SCHEDULE):
        return DEFAULT_SCHEDULE
    return tuple(DEFAULT_SCHEDULE[i * len(DEFAULT_SCHEDULE) // n_blocks] for i in range(n_blocks))


@dataclass(frozen=True)
class ModelSpec:
    scale: int = 2
    nf: int = 50
    nd: int = 25
    n_blocks: int = 6
    schedule: tuple = None
    chfab_channels: int = 8
    inv_kernel: int = 3
    inv_groups: int = 1
    inv_reduction: int = 4

    def __post_init__(self):
        if self.scale not in SUPPORTED_SCALES:
            raise InvalidConfigError(f"scale must be one of {SUPPORTED_SCALES}, got {self.scale}")
        if not 0 < self.nd < self.nf:
            raise InvalidConfigError(f"need 0 < nd < nf, got nd={self.nd}, nf={self.nf}")
        if self.n_blocks < 1:
            raise InvalidConfigError("n_blocks must be >= 1")
        sched = self.schedule
        if sched is None:
            sched = default_schedule(self.n_blocks)
        sched = tuple("".join(OperatorKind(ch).value for ch in entry) for entry in sched)
        if len(sched) != self.n_blocks or any(len(e) != 3 for e in sched):
            raise InvalidConfigError(
                f"schedule must hold {self.n_blocks} triples of B/I, got {sched}")
        object.__setattr__(self, "schedule", sched)
        if not 1 <= self.chfab_channels <= self.nf:
            raise InvalidConfigError("chfab_channels must lie in [1, nf]")
        if self.nf % self.inv_groups or self.chfab_channels % self.inv_groups:
            raise InvalidConfigError("inv_groups must divide nf and chfab_channels")

    @property
    def schedule_string(self) -> str:
        return "-".join(self.schedule)


class SRB(Module):
    """Shallow residual block: act(op(x) + x) with a BSConv or involution op."""

    def __init__(self, kind, channels: int, inv_kernel: int = 3, inv_groups: int = 1,
                 inv_reduction: int = 4):
        super().__init__()
        self.kind = OperatorKind(kind)
        if self.kind is OperatorKind.BSCONV:
            self.body = BSConv(channels, channels, 3)
        else:
            self.body = Involution(channels, inv_kernel, inv_groups, inv_reduction, ALPHA)

    def forward(self, x: Tensor) -> Tensor:
        return F.leaky_relu(self.body(x) + x, ALPHA)


class CHFAB(Module):
    """Contrast and high-frequency attention: x * sigmoid(spatial(x) + channel(x))."""

    def __init__(self, channels: int, trunk: int = 8, inv_kernel: int = 3, inv_groups: int = 1,
                 inv_reduction: int = 4):
        super().__init__()
        if not 1 <= trunk <= channels:
            raise InvalidConfigError(f"trunk={trunk} must lie in [1, channels={channels}]")
        squeezed = math.ceil(channels / 4)
        self.ch_reduce = Conv2d(channels, squeezed, 1)
        self.ch_expand = Conv2d(squeezed, channels, 1)
        self.sp_in = BSConv(channels, trunk, 3)
        self.bn_in = BatchNorm2d(trunk)
        self.sp_inv = Involution(trunk, inv_kernel, inv_groups, inv_reduction, ALPHA)
        self.bn_mid = BatchNorm2d(trunk)
        self.sp_out = BSConv(trunk, channels, 3)

    def channel_descriptor(self, x: Tensor) -> Tensor:
        mean, std = F.channel_stats(x)
        return self.ch_expand(F.leaky_relu(self.ch_reduce(mean + std), ALPHA))

    def spatial_map(self, x: Tensor) -> Tensor:
        t = F.leaky_relu(self.bn_in(self.sp_in(x)), ALPHA)
        return self.sp_out(self.bn_mid(self.sp_inv(t)))

    def forward(self, x: Tensor) -> Tensor:
        return x * F.sigmoid(self.spatial_map(x) + self.channel_descriptor(x))


class IBMDB(Module):
    """Distillation block: three parallel 1x1 distillations beside a chain of
    SRBs, a BSConv refinement, concat, 1x1 fusion, CHFAB and a residual."""

    def __init__(self, spec: ModelSpec, triple: str):
        super().__init__()
        if len(triple) != 3:
            raise InvalidConfigError(f"schedule entry must have 3 operators, got {triple!r}")
        inv = (spec.inv_kernel, spec.inv_groups, spec.inv_reduction)
        self.triple = "".join(OperatorKind(ch).value for ch in triple)
        self.distill = ModuleList(Conv2d(spec.nf, spec.nd, 1) for _ in range(3))
        self.srb = ModuleList(SRB(kind, spec.nf, *inv) for kind in self.triple)
        self.refine = BSConv(spec.nf, spec.nd, 3)
        self.fuse = Conv2d(4 * spec.nd, spec.nf, 1)
        self.chfab = CHFAB(spec.nf, spec.chfab_channels, *inv)

    def forward(self, x: Tensor) -> Tensor:
        refined = []
        coarse = x
        for distill, srb in zip(self.distill, self.srb):
            refined.append(distill(coarse))
            coarse = srb(coarse)
        refined.append(F.leaky_relu(self.refine(coarse), ALPHA))
        fused = self.fuse(F.channel_concat(refined))
        return self.chfab(fused) + x


class IBMDN(Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        object.__setattr__(self, "spec", spec)
        self.head = Conv2d(3, spec.nf, 3)
        self.blocks = ModuleList(IBMDB(spec, triple) for triple in spec.schedule)
        self.fuse_1x1 = Conv2d(spec.n_blocks * spec.nf, spec.nf, 1)
        self.fuse_3x3 = Conv2d(spec.nf, spec.nf, 3)
        self.tail = Conv2d(spec.nf, 3 * spec.scale ** 2, 3)

    def forward(self, x: Tensor) -> Tensor:
        """Unclamped super-resolved output, (N, 3, H*s, W*s)."""
        f0 = self.head(x)
        feats = []
        f = f0
        for block in self.blocks:
            f = block(f)
            feats.append(f)
        fused = self.fuse_3x3(self.fuse_1x1(F.channel_concat(feats)))
        return F.pixel_shuffle(self.tail(fused + f0), self.spec.scale)


def build_srb(kind, channels: int, seed: int | None = 0, **inv) -> SRB:
    return _finish(SRB(kind, channels, **inv), seed)


def build_chfab(channels: int, trunk: int = 8, seed: int | None = 0, **inv) -> CHFAB:
    return _finish(CHFAB(channels, trunk, **inv), seed)


def build_ibmdb(spec: ModelSpec, triple: str, seed: int | None = 0) -> IBMDB:
    return _finish(IBMDB(spec, triple), seed)


def build_ibmdn(spec: ModelSpec | None = None, seed: int | None = 0) -> IBMDN:
    """Build and initialise a network; ``seed=None`` leaves weights zero."""
    return _finish(IBMDN(spec or ModelSpec()), seed)


def _finish(module: Module, seed):
    if seed is not None:
        init_weights(module, seed)
    return module.assign_names()


def count_params(model: Module) -> tuple[int, dict]:
    """Total learnable scalars and a per-top-level-module breakdown.

    Batch-norm running statistics are excluded.
    """
    breakdown = {}
    for name, child in model.children():
        if isinstance(child, ModuleList):
            for sub, m in child.children():
                breakdown[f"{name}.{sub}"] = m.num_params()
        else:
            breakdown[name] = child.num_params()
    own = sum(p.size for p in model._params.values() if p.trainable)
    if own:
        breakdown["<self>"] = own
    return sum(breakdown.values()), breakdown


def forward_sr(model: IBMDN, lr_image) -> np.ndarray:
    """Inference: eval-mode forward without graph recording, clamped to [0, 1].

    Accepts a (1, 3, h, w) Tensor or array and returns an ndarray
    (1, 3, h*s, w*s). The model's previous train/eval mode is restored.
    """
    x = lr_image if isinstance(lr_image, Tensor) else Tensor(np.asarray(lr_image, dtype=np.float32))
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = model(x).data
    finally:
        model.train(was_training)
    return np.clip(out, 0.0, 1.0)
