"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (bad config, weights,
image or I/O failure).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import analysis
from .config import ArchConfig, load_config
from .errors import TinyDSODError
from .head import format_detections
from .image import load_image_ppm
from .model import build_model, detect
from .weights import load_weights, rand_init

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _hw(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _depths(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _read_config(path) -> ArchConfig:
    return load_config(path) if path else ArchConfig()


def _emit(text: str, out) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_analyze(args) -> int:
    model = build_model(_read_config(args.config))
    _emit(analysis.report_model(model, args.input_size, args.format, args.detail), args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    arch = _read_config(args.config)
    model = build_model(arch)
    params = load_weights(args.weights, model)
    img = load_image_ppm(args.image, arch.input_hw, arch.input.means)
    cfg = model.head.config
    if args.conf_thresh is not None:
        cfg = replace(cfg, conf_thresh=args.conf_thresh)
    _emit(format_detections(detect(img, model, params, cfg)), args.out)
    return EXIT_OK


def cmd_priors(args) -> int:
    model = build_model(_read_config(args.config))
    rows = model.priors()
    _emit("".join(f"{cx:.6f} {cy:.6f} {w:.6f} {h:.6f}\n" for cx, cy, w, h in rows), args.out)
    return EXIT_OK


def cmd_complexity(args) -> int:
    if args.block == "ddb-a" and args.expand is None:
        raise UsageError("--expand is required for --block ddb-a")
    fit = analysis.complexity_scan(
        args.block, args.growth, args.expand if args.block == "ddb-a" else None, args.n0, args.depths
    )
    lines = [f"block: {fit.kind}  g: {fit.g}" + (f"  w: {fit.w}" if fit.w else "") + f"  n0: {fit.n0}"]
    lines += [f"L={d:<6d} macs={m}" for d, m in zip(fit.depths, fit.macs)]
    lines.append(f"exponent: {fit.exponent:.3f}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_rand_init(args) -> int:
    model = build_model(_read_config(args.config))
    rand_init(model, args.seed, model.head.config.l2_scale).save(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tinydsod", description="Tiny-DSOD inference and resource accounting")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="per-module shapes, parameters and MACs")
    a.add_argument("--config")
    a.add_argument("--input-size", type=_hw, help="HxW, defaults to the config's input size")
    a.add_argument("--format", choices=("text", "csv"), default="text")
    a.add_argument("--detail", action="store_true", help="one row per layer")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    i = sub.add_parser("infer", help="detect objects in a PPM image")
    i.add_argument("--config")
    i.add_argument("--weights", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--conf-thresh", type=float)
    i.add_argument("--out")
    i.set_defaults(func=cmd_infer)

    pr = sub.add_parser("priors", help="dump default boxes as 'cx cy w h' lines")
    pr.add_argument("--config")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_priors)

    c = sub.add_parser("complexity", help="MAC growth of stacked dense blocks")
    c.add_argument("--block", choices=("ddb-a", "ddb-b"), required=True)
    c.add_argument("--growth", type=int, required=True)
    c.add_argument("--expand", type=int)
    c.add_argument("--depths", type=_depths, required=True)
    c.add_argument("--n0", type=int, default=32)
    c.add_argument("--out")
    c.set_defaults(func=cmd_complexity)

    r = sub.add_parser("rand-init", help="write Xavier-initialized weights")
    r.add_argument("--config")
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rand_init)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (TinyDSODError, OSError, ValueError) as exc:
        print(f"tinydsod: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
