"""Command-line entry point: ``ibmdn <subcommand> ...``.

Exit codes: 0 success, 1 usage or validation error, 2 I/O error,
3 numeric fault or failed check.
"""
from __future__ import annotations

import argparse
import os
import sys

from .errors import EmptyDatasetError, IBMDNError, NumericFaultError, ValidationError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CHECK = 0, 1, 2, 3

# published model sizes for the default configuration, per scale
REFERENCE_PARAMS = {2: 170_000, 3: 178_000, 4: 187_000}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for I/O here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def cmd_params(args, out) -> int:
    from .arch import ModelSpec, build_ibmdn, count_params

    spec = ModelSpec(scale=args.scale, nf=args.nf, nd=args.nf // 2, n_blocks=args.blocks)
    total, breakdown = count_params(build_ibmdn(spec, seed=None))
    width = max(len(k) for k in breakdown)
    for name, n in breakdown.items():
        print(f"{name:<{width}}  {n:>8d}", file=out)
    print(f"{'total':<{width}}  {total:>8d}", file=out)
    print(f"schedule {spec.schedule_string}", file=out)
    ref = REFERENCE_PARAMS.get(args.scale)
    if ref is not None and (args.nf, args.blocks) == (50, 6):
        print(f"reference x{args.scale}: {ref}  deviation {100.0 * (total - ref) / ref:+.2f}%", file=out)
    return EXIT_OK


def cmd_gradcheck(args, out) -> int:
    from .gradcheck import TOLERANCE, run_checks

    names = None if args.op is None else [args.op]
    results = run_checks(names, seed=args.seed, eps=args.eps)
    ok = True
    for name, r in results.items():
        status = "ok" if r.passed else "FAIL"
        ok &= r.passed
        extra = ""
        if r.skipped or r.at_floor:
            extra = f"  (kink-skipped {r.skipped}, at round-off floor {r.at_floor})"
        print(f"{name:<18} max_rel_err={r.error:.3e}  coords={r.checked}  {status}{extra}", file=out)
    print(f"tolerance {TOLERANCE:g}: {'all passed' if ok else 'FAILED'}", file=out)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_train(args, out) -> int:
    from .arch import ModelSpec
    from .train import TrainConfig, train_loop

    spec = ModelSpec(scale=args.scale)
    cfg = TrainConfig(iters=args.iters, batch=args.batch, hr_patch=args.patch,
                      seed=args.seed, augment=not args.no_augment)
    cfg.validate(spec.scale)
    report = train_loop(spec, cfg, args.hr_dir, args.out,
                        log=lambda line: print(line, file=out, flush=True))
    print(f"saved {report.checkpoint} after {report.iterations} iterations "
          f"({report.seconds:.1f}s)", file=out)
    return EXIT_OK


def cmd_infer(args, out) -> int:
    from .arch import forward_sr
    from .checkpoint import load_checkpoint
    from .pipeline import ImageRGB, load_image, save_image

    model = load_checkpoint(args.model)
    lr = load_image(args.input)
    sr = ImageRGB(forward_sr(model, lr.to_batch())[0])
    save_image(sr, args.output)
    print(f"{lr.width}x{lr.height} -> {sr.width}x{sr.height}: {args.output}", file=out)
    return EXIT_OK


def hrcrop_path(output) -> str:
    root, ext = os.path.splitext(output)
    return f"{root}_hrcrop{ext or '.png'}"


def cmd_degrade(args, out) -> int:
    from .pipeline import load_image, make_lr, save_image

    hr, lr = make_lr(load_image(args.input), args.scale)
    save_image(lr, args.output)
    save_image(hr, hrcrop_path(args.output))
    print(f"{hr.width}x{hr.height} -> {lr.width}x{lr.height}: {args.output}", file=out)
    return EXIT_OK


def cmd_eval(args, out) -> int:
    from .metrics import default_csv_path, evaluate_dir

    if not args.identity and args.model is None:
        raise UsageError("eval: --model is required unless --identity is given")
    csv_path = default_csv_path(args.hr_dir)
    report = evaluate_dir(args.model, args.hr_dir, args.scale, identity=args.identity,
                          csv_path=csv_path)
    print(report.table(), file=out)
    for name in report.skipped:
        print(f"skipped {name}", file=out)
    print(f"csv: {csv_path}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ibmdn", description="Lightweight involution/BSConv super-resolution engine.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    scales = dict(type=int, choices=(2, 3, 4))

    s = sub.add_parser("params", help="parameter accounting")
    s.add_argument("--scale", required=True, **scales)
    s.add_argument("--nf", type=_positive, default=50)
    s.add_argument("--blocks", type=_positive, default=6)
    s.set_defaults(func=cmd_params)

    s = sub.add_parser("gradcheck", help="finite-difference gradient certification")
    s.add_argument("--op", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eps", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("train", help="train on a directory of HR PNGs")
    s.add_argument("--hr-dir", required=True)
    s.add_argument("--scale", required=True, **scales)
    s.add_argument("--iters", required=True, type=int)
    s.add_argument("--batch", type=_positive, default=16)
    s.add_argument("--patch", type=_positive, default=192)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-augment", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="super-resolve one PNG")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("degrade", help="bicubic-downscale one PNG")
    s.add_argument("--input", required=True)
    s.add_argument("--scale", required=True, **scales)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("eval", help="Y-PSNR / SSIM over a directory")
    s.add_argument("--model", default=None)
    s.add_argument("--hr-dir", required=True)
    s.add_argument("--scale", required=True, **scales)
    s.add_argument("--identity", action="store_true")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=err)
        return EXIT_USAGE
    except NumericFaultError as exc:
        print(f"numeric fault: {exc}", file=err)
        return EXIT_CHECK
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=err)
        return EXIT_USAGE
    except (OSError, EmptyDatasetError) as exc:
        print(f"I/O error: {exc}", file=err)
        return EXIT_IO
    except IBMDNError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
