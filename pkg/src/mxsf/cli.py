"""Command-line interface.

Lines starting with ``#!`` are machine-readable ``key=value`` pairs with
numeric values; everything else is informational.  Exit status is 0 on
success, 1 for usage errors and 2 for file or data errors.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import safe_mac, synth
from .block_quant import TileShape, count_quantization_events, quantize_tensor
from .error_metrics import tensor_error_report
from .errors import MxError
from .formats import CLI_NAMES
from .tensor_store import load_dense, load_mxb, save_dense, save_mxb

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
_MAPPINGS = {"1d": "oneD", "tiled": "tiled"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def fmt_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def emit(key: str, value) -> None:
    print(f"#!{key}={fmt_value(value)}")


def _tile(text: str) -> TileShape:
    try:
        return TileShape.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _dims(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        dims = ()
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"dims must look like MxKxN with positive sizes, got {text!r}")
    return dims


def _formats(text: str) -> list[str]:
    names = [t.strip().lower() for t in text.split(",") if t.strip()]
    bad = [n for n in names if n not in CLI_NAMES]
    if not names or bad:
        raise argparse.ArgumentTypeError(f"unknown format(s) {bad or text!r}; choose from {', '.join(CLI_NAMES)}")
    return names


def cmd_quantize(args) -> None:
    x = load_dense(args.inp)
    fmt = CLI_NAMES[args.format]
    q = quantize_tensor(x, args.tile, fmt)
    save_mxb(args.out, q)
    report = tensor_error_report(x, fmt, args.tile)
    print(f"quantized {x.shape[0]}x{x.shape[1]} to {fmt} with {args.tile} tiles -> {args.out}")
    emit("blocks", q.n_blocks)
    emit("underflow_ratio", report.underflow_ratio)
    emit("mean_distance", report.mean_distance)


def cmd_dequantize(args) -> None:
    q = load_mxb(args.inp)
    save_dense(args.out, q.dequantize())
    emit("rows", q.logical_dims[0])
    emit("cols", q.logical_dims[1])


def cmd_stats(args) -> None:
    x = load_dense(args.inp)
    report = tensor_error_report(x, CLI_NAMES[args.format], args.tile)
    print(f"{args.format} with {args.tile} tiles on {x.shape[0]}x{x.shape[1]}")
    for key, value in report.as_pairs():
        emit(key, value)


def cmd_compare(args) -> None:
    x = load_dense(args.inp)
    print(f"{'format':>8} {'mse':>16} {'max_err':>16} {'underflow':>12} {'mean_dist':>10}")
    for name in args.formats:
        r = tensor_error_report(x, CLI_NAMES[name], args.tile)
        print(f"{name:>8} {r.mse:16.9g} {r.max_abs_err:16.9g} {r.underflow_ratio:12.6g} {r.mean_distance:10.4g}")
        emit(f"mse.{name}", r.mse)
        emit(f"max_err.{name}", r.max_abs_err)
        emit(f"underflow_ratio.{name}", r.underflow_ratio)
        emit(f"mean_distance.{name}", r.mean_distance)


def max_rel_err(c: np.ndarray, ref: np.ndarray) -> float:
    c = c.astype(np.float64)
    nz = ref != 0
    rel = np.zeros_like(ref)
    rel[nz] = np.abs(c[nz] - ref[nz]) / np.abs(ref[nz])
    rel[~nz] = np.where(c[~nz] == 0, 0.0, math.inf)
    return float(rel.max()) if rel.size else 0.0


def cmd_matmul(args) -> None:
    A, B = load_mxb(args.a), load_mxb(args.b)
    cfg = safe_mac.CONFIGS[args.cfg]
    C = safe_mac.gemm(A, B, _MAPPINGS[args.mapping], cfg)
    if args.out:
        save_dense(args.out, C)
    emit("rows", C.shape[0])
    emit("cols", C.shape[1])
    if args.check:
        ref = safe_mac.reference_gemm(A.dequantize(), B.dequantize())
        emit("max_rel_err", max_rel_err(C, ref))
        emit("max_abs_err", float(np.max(np.abs(C - ref))) if C.size else 0.0)


def cmd_trainstep(args) -> None:
    events = count_quantization_events(args.dims, args.tile, training=not args.inference)
    kind = "2D" if args.tile.is_2d else "1D"
    print(f"{kind} tile {args.tile}, layer {'x'.join(map(str, args.dims))}")
    emit("quant_events", events)


def cmd_gen(args) -> None:
    x = synth.tensor(args.dist, args.rows, args.cols, seed=args.seed, sigma=args.sigma)
    save_dense(args.out, x)
    emit("elements", x.size)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mxsf", description="Microscaling block quantization tools")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt_choices = list(CLI_NAMES)

    q = sub.add_parser("quantize", help="dense tensor -> MX block file")
    q.add_argument("--in", dest="inp", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--format", required=True, choices=fmt_choices)
    q.add_argument("--tile", required=True, type=_tile)
    q.set_defaults(func=cmd_quantize)

    d = sub.add_parser("dequantize", help="MX block file -> dense tensor")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dequantize)

    s = sub.add_parser("stats", help="full error report for one format")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--format", required=True, choices=fmt_choices)
    s.add_argument("--tile", required=True, type=_tile)
    s.set_defaults(func=cmd_stats)

    c = sub.add_parser("compare", help="MSE / underflow table across formats")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--formats", required=True, type=_formats)
    c.add_argument("--tile", required=True, type=_tile)
    c.set_defaults(func=cmd_compare)

    m = sub.add_parser("matmul", help="GEMM of two MX block files")
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.add_argument("--mapping", choices=list(_MAPPINGS), default="1d")
    m.add_argument("--cfg", choices=list(safe_mac.CONFIGS), default="default")
    m.add_argument("--out")
    m.add_argument("--check", action="store_true")
    m.set_defaults(func=cmd_matmul)

    t = sub.add_parser("trainstep", help="quantization events for one linear-layer step")
    t.add_argument("--dims", required=True, type=_dims)
    t.add_argument("--tile", required=True, type=_tile)
    t.add_argument("--inference", action="store_true", help="forward pass only")
    t.set_defaults(func=cmd_trainstep)

    g = sub.add_parser("gen", help="write a synthetic dense tensor")
    g.add_argument("--dist", choices=synth.DISTRIBUTIONS, default="gaussian")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--cols", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (MxError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
