"""Finite-difference certification of every differentiable op and block.

Each registered check builds seeded float64 inputs, reduces the op output to a
scalar with a fixed random projection ``sum(out * R)`` (so every output element
contributes a distinct weight), and reports the worst relative error over the
input gradient and, for ops with weights, the parameter gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .arch import ModelSpec, build_chfab, build_ibmdb, build_ibmdn, build_srb
from .errors import InvalidConfigError
from .nn import functional as F
from .tensor import Tensor, grad_check, mul, no_grad, sum_all, unfold
from .train import mae_loss

TOLERANCE = 1e-4
SHAPE = (2, 4, 5, 5)
MAX_SKIP_FRACTION = 0.25


@dataclass
class CheckResult:
    error: float
    checked: int
    skipped: int = 0  # straddled a kink
    at_floor: int = 0  # both gradients below round-off resolution, and equal within it

    @property
    def passed(self) -> bool:
        total = self.checked + self.skipped
        return (self.error < TOLERANCE and self.checked > 0
                and self.skipped <= MAX_SKIP_FRACTION * total)


def _project(out: Tensor, rng) -> Tensor:
    r = Tensor(rng.standard_normal(out.shape))
    return sum_all(mul(out, r))


def _away_from_kinks(rng, shape, gap=0.1):
    # keep |x| >= gap so piecewise-linear activations are differentiable
    x = rng.uniform(gap, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _patterns_equal(p, q) -> bool:
    return len(p) == len(q) and all(np.array_equal(u, v) for u, v in zip(p, q))


def fd_check(fn, targets, eps: float = 1e-4, max_coords: int | None = None, seed: int = 0,
             resolution: float = 0.0):
    """Kink-aware central differences over in-place perturbable arrays.

    ``targets`` is a list of (array, analytic_grad). A coordinate whose +eps
    and -eps evaluations see different activation sign patterns straddles a
    kink and is skipped. Where both gradients are below ``resolution`` (the
    round-off floor of the difference quotient) they are compared absolutely.
    Returns (max_error, checked, skipped, at_floor).
    """
    coords = [(t, i) for t in range(len(targets)) for i in range(targets[t][0].size)]
    if max_coords is not None and len(coords) > max_coords:
        pick = np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[j] for j in np.sort(pick)]
    worst, checked, skipped, floor = 0.0, 0, 0, 0
    with no_grad():
        for t, i in coords:
            flat = targets[t][0].reshape(-1)
            orig = flat[i]
            flat[i] = orig + eps
            with F.record_kinks() as kp:
                fp = fn().item()
            flat[i] = orig - eps
            with F.record_kinks() as km:
                fm = fn().item()
            flat[i] = orig
            if not _patterns_equal(kp, km):
                skipped += 1
                continue
            numeric = (fp - fm) / (2 * eps)
            analytic = float(targets[t][1].reshape(-1)[i])
            checked += 1
            big = max(abs(analytic), abs(numeric))
            if big <= resolution and abs(analytic - numeric) <= resolution:
                floor += 1
                continue
            worst = max(worst, abs(analytic - numeric) / max(big, 1e-8))
    return worst, checked, skipped, floor


def roundoff_floor(terms: np.ndarray, eps: float) -> float:
    """Resolution of a central difference of ``sum(terms)``: a few ulps over 2 * eps."""
    return 16 * np.finfo(np.float64).eps * float(np.abs(terms).sum()) / (2 * eps)


def randomize(module, seed: int):
    """Variance-preserving random weights plus nonzero biases and BN affines.

    The training init is deliberately small; under it batch norm sees
    near-constant inputs and the finite-difference truncation error dominates.
    """
    rng = np.random.default_rng(seed)
    for name, p in module.named_parameters(trainable_only=True):
        leaf = name.rsplit(".", 1)[-1]
        if p.ndim == 4:
            bound = np.sqrt(3.0 / (p.shape[1] * p.shape[2] * p.shape[3]))
            p.data[...] = rng.uniform(-bound, bound, size=p.shape)
        elif leaf == "gamma":
            p.data[...] = rng.uniform(0.5, 1.5, size=p.shape)
        else:
            p.data[...] = rng.uniform(-0.2, 0.2, size=p.shape)
    return module


def _module_check(module, x0, seed, eps, max_param_coords=300):
    """Input and parameter gradients of ``sum(module(x) * R)``."""
    module.astype(np.float64)
    randomize(module, seed)
    module.train()
    module.zero_grads()
    x = np.array(x0, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    with no_grad():
        out0 = module(Tensor(x)).data
    r = Tensor(rng.standard_normal(out0.shape))
    res = roundoff_floor(out0 * r.data, eps)

    def f():
        return sum_all(mul(module(xt), r))

    xt = Tensor(x, requires_grad=True)
    f().backward()
    gx = np.zeros_like(x) if xt.grad is None else xt.grad.copy()
    xt = Tensor(x)  # shares the buffer fd_check perturbs
    e_in, c_in, s_in, f_in = fd_check(f, [(x, gx)], eps, resolution=res)
    params = module.parameters()
    e_par, c_par, s_par, f_par = fd_check(f, [(p.data, p.grad.copy()) for p in params], eps,
                                          max_coords=max_param_coords, seed=seed, resolution=res)
    module.zero_grads()
    return CheckResult(max(e_in, e_par), c_in + c_par, s_in + s_par, f_in + f_par)


# ---------------------------------------------------------------------------
# individual checks; each takes (seed, eps) and returns a CheckResult


def _merge(*results) -> CheckResult:
    return CheckResult(max(r.error for r in results), sum(r.checked for r in results),
                       sum(r.skipped for r in results), sum(r.at_floor for r in results))


def _input_check(op, x0, seed, eps) -> CheckResult:
    """grad_check of ``sum(op(x) * R)`` over every input coordinate."""
    err = grad_check(lambda x: _project(op(x), np.random.default_rng(seed + 1)), x0, eps)
    return CheckResult(err, int(np.size(x0)))


def _conv2d(seed, eps, k=3, groups=1, c_out=6):
    rng = np.random.default_rng(seed)
    conv = nn.init_weights(nn.Conv2d(SHAPE[1], c_out, k, groups=groups), seed)
    conv.bias.data[...] = rng.standard_normal(conv.bias.shape)
    return _module_check(conv, rng.standard_normal(SHAPE), seed, eps)


def check_conv2d(seed, eps):
    return _merge(_conv2d(seed, eps), _conv2d(seed, eps, k=1), _conv2d(seed, eps, groups=2))


def check_depthwise(seed, eps):
    return _conv2d(seed, eps, groups=SHAPE[1], c_out=SHAPE[1])


def check_bsconv(seed, eps):
    rng = np.random.default_rng(seed)
    m = nn.init_weights(nn.BSConv(SHAPE[1], 6), seed)
    return _module_check(m, rng.standard_normal(SHAPE), seed, eps)


def check_involution(seed, eps):
    rng = np.random.default_rng(seed)
    m = nn.init_weights(nn.Involution(SHAPE[1], 3, groups=2, reduction=2), seed)
    return _module_check(m, rng.standard_normal(SHAPE), seed, eps)


def check_involution_apply(seed, eps):
    rng = np.random.default_rng(seed)
    n, c, h, w = SHAPE
    k0 = rng.standard_normal((n, 2 * 9, h, w))
    x0 = rng.standard_normal(SHAPE)
    kt, xt = Tensor(k0), Tensor(x0)
    return _merge(_input_check(lambda x: F.involution_apply(x, kt, 3, 2), x0, seed, eps),
                  _input_check(lambda k: F.involution_apply(xt, k, 3, 2), k0, seed, eps))


def check_unfold(seed, eps):
    rng = np.random.default_rng(seed)
    return _input_check(lambda x: unfold(x, 3, 1), rng.standard_normal(SHAPE), seed, eps)


def check_batch_norm(seed, eps):
    rng = np.random.default_rng(seed)
    bn = nn.BatchNorm2d(SHAPE[1])
    bn.gamma.data[...] = rng.uniform(0.5, 1.5, SHAPE[1])
    bn.beta.data[...] = rng.standard_normal(SHAPE[1])
    x0 = rng.standard_normal(SHAPE)
    train = _module_check(bn, x0, seed, eps)
    bn.running_var.data[...] = rng.uniform(0.5, 2.0, SHAPE[1])
    bn.eval()
    return _merge(train, _input_check(bn, x0, seed, eps))


def check_activations(seed, eps):
    rng = np.random.default_rng(seed)
    x0 = _away_from_kinks(rng, SHAPE)
    return _merge(*(_input_check(lambda x, kind=kind: F.activation(x, kind), x0, seed, eps)
                    for kind in ("leaky_relu", "relu", "sigmoid")))


def check_pixel_shuffle(seed, eps):
    rng = np.random.default_rng(seed)
    return _merge(_input_check(lambda x: F.pixel_shuffle(x, 2), rng.standard_normal((2, 8, 3, 3)), seed, eps),
                  _input_check(lambda x: F.pixel_unshuffle(x, 2), rng.standard_normal((2, 2, 4, 4)), seed, eps))


def check_concat(seed, eps):
    rng = np.random.default_rng(seed)

    def op(x):
        return F.channel_concat([F.channel_slice(x, 0, 1), x, F.channel_slice(x, 1, 3)])

    return _input_check(op, rng.standard_normal(SHAPE), seed, eps)


def check_channel_stats(seed, eps):
    rng = np.random.default_rng(seed)

    def op(x):
        mean, std = F.channel_stats(x)
        return F.channel_concat([mean, std])

    return _input_check(op, rng.standard_normal(SHAPE), seed, eps)


def check_srb(seed, eps):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(SHAPE)
    return _merge(*(_module_check(build_srb(kind, SHAPE[1], seed=seed), x0, seed, eps)
                    for kind in ("B", "I")))


def check_chfab(seed, eps):
    rng = np.random.default_rng(seed)
    return _module_check(build_chfab(SHAPE[1], trunk=4, seed=seed),
                         rng.standard_normal(SHAPE), seed, eps)


def check_ibmdb(seed, eps):
    rng = np.random.default_rng(seed)
    spec = ModelSpec(nf=SHAPE[1], nd=2, n_blocks=1, schedule=("BIB",), chfab_channels=4)
    return _module_check(build_ibmdb(spec, "BIB", seed=seed), rng.standard_normal(SHAPE), seed, eps)


def check_mae_loss(seed, eps):
    rng = np.random.default_rng(seed)
    target = rng.standard_normal(SHAPE)
    pred0 = target + _away_from_kinks(rng, SHAPE)
    return CheckResult(grad_check(lambda x: mae_loss(x, target), pred0, eps), pred0.size)


def check_ibmdn(seed, eps):
    rng = np.random.default_rng(seed)
    spec = ModelSpec(scale=2, nf=8, nd=4, n_blocks=2, chfab_channels=4)
    model = build_ibmdn(spec, seed=seed)
    return _module_check(model, rng.uniform(0, 1, (1, 3, 8, 8)), seed, eps)


REGISTRY = {
    "conv2d": check_conv2d,
    "depthwise": check_depthwise,
    "bsconv": check_bsconv,
    "involution": check_involution,
    "involution_apply": check_involution_apply,
    "unfold": check_unfold,
    "batch_norm": check_batch_norm,
    "activations": check_activations,
    "pixel_shuffle": check_pixel_shuffle,
    "concat": check_concat,
    "channel_stats": check_channel_stats,
    "srb": check_srb,
    "chfab": check_chfab,
    "ibmdb": check_ibmdb,
    "mae_loss": check_mae_loss,
    "ibmdn": check_ibmdn,
}


def run_checks(names=None, seed: int = 0, eps: float = 1e-4) -> dict:
    """Run the named checks (all when ``names`` is None); returns name -> CheckResult."""
    names = list(REGISTRY) if names is None else list(names)
    unknown = [n for n in names if n not in REGISTRY]
    if unknown:
        raise InvalidConfigError(f"unknown op(s) {unknown}; choose from {sorted(REGISTRY)}")
    return {n: REGISTRY[n](seed, eps) for n in names}
