"""Command-line entry point: ``csnln <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure (I/O, bad data or
checkpoint), 3 verification failure. Every run starts by printing its
resolved configuration, including the seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, ops
from .attention import correlation_map, identity_attention
from .checkpoint import CheckpointError, load_checkpoint
from .evaluation import evaluate, format_table, load_hr_dir, model_upscaler
from .heatmap import grid_to_pixels, render
from .imageio import UnsupportedImageError, image_to_tensor, load_png, save_png
from .network import PRESETS, head, init_csnln, parameter_report, params_from_arrays, preset
from .sem import BRANCHES
from .tensor import Tensor
from .training import format_config, load_config, train
from .verify import BREAK_ENV, run_gradcheck, run_oracle

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3

# failures that mean "the inputs or environment were bad", reported as exit 2
RUNTIME_ERRORS = (OSError, ValueError, CheckpointError, UnsupportedImageError, FloatingPointError, MemoryError)


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _query(text: str) -> tuple[int, int]:
    try:
        i, j = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'row,col', got {text!r}") from None
    return i, j


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> Parser:
    parser = Parser(prog="csnln", description="Cross-scale non-local attention super-resolution toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="seed for all randomness (default 0; train defaults to the config's seed)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", parents=[common], help="train a model from a config file")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--resume", help="checkpoint to continue from (normally <out_dir>/last.ckpt)")

    p = sub.add_parser("infer", parents=[common], help="super-resolve one PNG")
    p.add_argument("--ckpt", required=True, help="trained checkpoint")
    p.add_argument("--input", required=True, help="low-resolution PNG")
    p.add_argument("--scale", type=_positive, required=True, help="upscaling factor; must match the checkpoint")
    p.add_argument("--output", required=True, help="where to write the super-resolved PNG")

    p = sub.add_parser("eval", parents=[common], help="Y-channel PSNR/SSIM table over a directory of HR PNGs")
    p.add_argument("--ckpt", required=True, help="trained checkpoint")
    p.add_argument("--hr-dir", required=True, help="directory of high-resolution PNGs")
    p.add_argument("--scale", type=_positive, required=True, help="downscaling factor for the LR inputs")
    p.add_argument("--border-crop", type=int, default=None, help="pixels cropped per side before scoring (default: scale)")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every differentiable op")
    p.add_argument("--preset", choices=["toy"], default="toy", help="network size for the end-to-end check")
    p.add_argument("--only", action="append", metavar="CHECK", help="run just this check (repeatable)")

    p = sub.add_parser("oracle", parents=[common], help="fast attention paths vs brute-force oracles")
    p.add_argument("--seeds", type=_positive, default=20, help="number of random cases (default 20)")

    p = sub.add_parser("attnmap", parents=[common], help="render one query's cross-scale correlation map")
    p.add_argument("--ckpt", help="use this checkpoint's head features and embeddings (default: raw pixels)")
    p.add_argument("--input", required=True, help="input PNG")
    p.add_argument("--query", type=_query, required=True, help="query pixel as row,col")
    p.add_argument("--scale", type=_positive, default=2, help="cross-scale factor (default 2)")
    p.add_argument("--patch", type=_positive, default=3, help="odd patch size (default 3)")
    p.add_argument("--out", required=True, help="where to write the heatmap PNG")

    p = sub.add_parser("params", parents=[common], help="trainable parameter counts per module")
    p.add_argument("--preset", choices=sorted(PRESETS), default="paper", help="model size (default paper)")
    p.add_argument("--scale", type=_positive, default=2, help="upscaling factor (default 2)")
    p.add_argument("--disable", action="append", choices=BRANCHES, default=[], help="drop a SEM branch (repeatable)")
    return parser


def _print_config(command: str, items: dict) -> None:
    print(f"# csnln {command}")
    for k, v in items.items():
        print(f"{k} = {v}")
    sys.stdout.flush()


def _load_model(path):
    try:
        return params_from_arrays(load_checkpoint(path))
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {path}", EXIT_RUNTIME) from None
    except (CheckpointError, ValueError) as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}", EXIT_RUNTIME) from None


def cmd_train(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        raise CliError(f"config file not found: {path}", EXIT_USAGE)
    try:
        cfg = load_config(path)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}", EXIT_USAGE) from None
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    print("# csnln train")
    print(format_config(cfg))
    if args.resume:
        print(f"resume = {args.resume}")
    sys.stdout.flush()
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        result = train(cfg, resume=args.resume)
    except CheckpointError as exc:
        raise CliError(f"cannot resume from {args.resume}: {exc}", EXIT_RUNTIME) from None
    print(f"finished at step {result.step}; best val_psnr {result.best_psnr:.3f} dB; outputs in {cfg.out_dir}")
    return EXIT_OK


def cmd_infer(args) -> int:
    seed = 0 if args.seed is None else args.seed
    params = _load_model(args.ckpt)
    _print_config("infer", {"ckpt": args.ckpt, "input": args.input, "scale": args.scale, "output": args.output,
                            "seed": seed, "model": params.config})
    if params.config.scale != args.scale:
        raise CliError(f"checkpoint is for scale {params.config.scale}, not {args.scale}", EXIT_RUNTIME)
    lr = load_png(args.input)
    sr = model_upscaler(params)(lr)
    save_png(args.output, sr)
    print(f"wrote {args.output} ({sr.shape[1]}x{sr.shape[0]})")
    return EXIT_OK


def cmd_eval(args) -> int:
    seed = 0 if args.seed is None else args.seed
    border = args.scale if args.border_crop is None else args.border_crop
    params = _load_model(args.ckpt)
    _print_config("eval", {"ckpt": args.ckpt, "hr_dir": args.hr_dir, "scale": args.scale, "border_crop": border,
                           "seed": seed, "model": params.config})
    if params.config.scale != args.scale:
        raise CliError(f"checkpoint is for scale {params.config.scale}, not {args.scale}", EXIT_RUNTIME)
    rows = evaluate(load_hr_dir(args.hr_dir), args.scale, model_upscaler(params), border_crop=border)
    print(format_table(rows))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    _print_config("gradcheck", {"preset": args.preset, "seed": seed, "dtype": "float64",
                                "only": ",".join(args.only or []) or "all"})

    def report(res):
        print(f"{res.name:<20} max_rel_err {res.error:.3e}  {'PASS' if res.passed else 'FAIL'}", flush=True)

    broken = os.environ.get(BREAK_ENV)
    if broken and not hasattr(ops, broken):
        raise CliError(f"{BREAK_ENV} names unknown op {broken!r}", EXIT_USAGE)
    results = run_gradcheck(seed=seed, only=args.only, report=report)
    if args.only and not results:
        raise CliError(f"no check named {', '.join(args.only)}", EXIT_USAGE)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_oracle(args) -> int:
    seed = 0 if args.seed is None else args.seed
    _print_config("oracle", {"seeds": args.seeds, "seed": seed})

    def report(case):
        print(f"{case.name:<26} shape {str(case.shape):<16} s={case.scale} p={case.patch} {case.dtype:<7} "
              f"divergence {case.divergence:.2e}  {'PASS' if case.passed else 'FAIL'}", flush=True)

    results = run_oracle(args.seeds, report=report, first_seed=seed)
    failed = [c for c in results if not c.passed]
    print(f"{len(results) - len(failed)}/{len(results)} cases passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_attnmap(args, parser) -> int:
    seed = 0 if args.seed is None else args.seed
    image = load_png(args.input)
    h, w = image.shape[:2]
    i, j = args.query
    if not (0 <= i < h and 0 <= j < w):
        parser.error(f"query {i},{j} is outside the {h}x{w} image")
    if args.patch % 2 == 0:
        parser.error("--patch must be odd")
    _print_config("attnmap", {"ckpt": args.ckpt or "none (raw pixels)", "input": args.input, "query": f"{i},{j}",
                              "scale": args.scale, "patch": args.patch, "out": args.out, "seed": seed})
    if args.ckpt:
        params = _load_model(args.ckpt)
        if params.sem.csnl is None:
            raise CliError("checkpoint has no cross-scale branch", EXIT_RUNTIME)
        att = dataclasses.replace(params.sem.csnl, scale=args.scale, patch=args.patch)
        x = head(image_to_tensor(image), params)
    else:
        raw = image.astype(np.float64).transpose(2, 0, 1)[None] / 255.0
        # centring makes a flat image score zero everywhere instead of favouring bright patches
        x = Tensor(raw - raw.mean(axis=(2, 3), keepdims=True))
        att = identity_attention(3, scale=args.scale, patch=args.patch)
    weights = correlation_map(x, att, (i, j)).data[0, 0].astype(np.float64)
    save_png(args.out, render(weights, h, w, query=(i, j)))
    cell = np.unravel_index(int(np.argmax(weights)), weights.shape)
    rows, cols = grid_to_pixels(cell, weights.shape, h, w)
    print(f"candidate grid {weights.shape[0]}x{weights.shape[1]}; argmax cell {cell[0]},{cell[1]} "
          f"(weight {weights[cell]:.4f}) covers rows {rows.start}-{rows.stop - 1} cols {cols.start}-{cols.stop - 1}")
    print(f"wrote {args.out} ({w}x{h})")
    return EXIT_OK


def cmd_params(args) -> int:
    seed = 0 if args.seed is None else args.seed
    cfg = preset(args.preset, scale=args.scale).without(*args.disable)
    _print_config("params", {"preset": args.preset, "seed": seed, "model": cfg})
    report = parameter_report(init_csnln(cfg, seed=seed))
    width = max(len(k) for k in report)
    for name, count in report.items():
        print(f"{name:<{width}}  {count:>10,d}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
                "oracle": cmd_oracle, "params": cmd_params}
    try:
        if args.command == "attnmap":
            return cmd_attnmap(args, parser)
        return handlers[args.command](args)
    except CliError as exc:
        print(f"csnln {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    except RUNTIME_ERRORS as exc:
        print(f"csnln {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
