"""Command-line front end.

Exit codes (part of the public contract):

    0  success
    2  malformed input file
    3  dimension error / invalid model configuration
    4  shape or descriptor-dimension mismatch
    5  training divergence
    6  out-of-bounds keypoint coordinate
    7  numeric overflow in the fast detection loss
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import archcalc, fileio
from .descriptors import gram_gap, mnn_match
from .detection import KeypointList, Raster, merge_flip_cache, unfold_softmax_fast, unfold_softmax_naive
from .distill import LossWeights, lra_compress, pca_compress, procrustes_solve
from .errors import (
    BadDimensionError,
    BadInputSizeError,
    DimMismatchError,
    DivergenceError,
    EpdistillError,
    MalformedFileError,
    NumericOverflowError,
    OutOfBoundsError,
    RowCountMismatchError,
    ShapeMismatchError,
)
from .harness import DistillConfig, train

EXIT_MALFORMED = 2
EXIT_DIMENSION = 3
EXIT_SHAPE = 4
EXIT_DIVERGENCE = 5
EXIT_BOUNDS = 6
EXIT_OVERFLOW = 7

_EXIT_BY_ERROR = (
    (MalformedFileError, EXIT_MALFORMED),
    ((BadDimensionError, BadInputSizeError), EXIT_DIMENSION),
    ((ShapeMismatchError, DimMismatchError, RowCountMismatchError), EXIT_SHAPE),
    (DivergenceError, EXIT_DIVERGENCE),
    (OutOfBoundsError, EXIT_BOUNDS),
    (NumericOverflowError, EXIT_OVERFLOW),
)

SEED_ENV_VAR = "EP2_SEED"


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _cmd_compress(args) -> int:
    matrix = fileio.read_descriptor_file(args.input)
    if args.method == "lra":
        out = lra_compress(matrix, args.dim).data
    else:
        out = pca_compress(matrix, args.dim)
    fileio.write_descriptor_file(args.output, out)
    print(f"gram_gap={_fmt(gram_gap(out, matrix))}")
    return 0


def _cmd_procrustes(args) -> int:
    target = fileio.read_descriptor_file(args.target)
    source = fileio.read_descriptor_file(args.source)
    omega = procrustes_solve(target, source)
    aligned = target @ omega.data
    fileio.write_descriptor_file(args.output_aligned, aligned)
    resid = aligned - source
    print(f"op_residual={_fmt(float(np.sum(resid * resid)))}")
    return 0


def _resolve_seed(flag_value) -> int:
    if flag_value is not None:
        return flag_value
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise MalformedFileError(f"{SEED_ENV_VAR}={env!r} is not an integer") from exc
    return 0


def _cmd_distill_demo(args) -> int:
    config = DistillConfig(
        c_desc=args.c_desc,
        n_views=args.views,
        noise_sigma=args.sigma,
        steps=args.steps,
        learning_rate=args.lr,
        weights=LossWeights(w_op=args.w_op, w_sim=args.w_sim, w_detect=1.0),
        compression=args.compression,
        use_sim_loss=not args.no_sim_loss,
        seed=_resolve_seed(args.seed),
        teacher_dim=args.teacher_dim,
        resample_teacher=args.resample_teacher,
    )
    report = train(config)
    with open(args.report, "w", newline="") as fh:
        report.to_csv(fh)
    print(f"gram_gap={_fmt(report.final.gram_gap)}")
    return 0


def _cmd_cache(args) -> int:
    k1 = KeypointList(fileio.read_keypoint_csv(args.kps))
    k2 = KeypointList(fileio.read_keypoint_csv(args.kps_flipped))
    survivors, heatmap = merge_flip_cache(
        k1, k2, image_width=args.width, image_height=args.height, radius=args.radius
    )
    fileio.write_heatmap_file(args.out_heatmap, heatmap.values)
    print(f"count={len(survivors)}")
    return 0


def _cmd_detect_loss(args) -> int:
    logits = Raster(fileio.read_raster_file(args.logits))
    target = fileio.read_heatmap_file(args.target)
    if args.impl == "naive":
        print(f"loss={_fmt(unfold_softmax_naive(logits, target, args.kernel))}")
    elif args.impl == "fast":
        print(f"loss={_fmt(unfold_softmax_fast(logits, target, args.kernel))}")
    else:
        naive = unfold_softmax_naive(logits, target, args.kernel)
        fast = unfold_softmax_fast(logits, target, args.kernel)
        print(f"loss_naive={_fmt(naive)}")
        print(f"loss_fast={_fmt(fast)}")
        print(f"difference={_fmt(abs(naive - fast))}")
    return 0


def _cmd_match(args) -> int:
    a = fileio.read_descriptor_file(args.a)
    b = fileio.read_descriptor_file(args.b)
    matches = mnn_match(a, b)
    order = np.argsort(-matches.similarities, kind="stable")
    with open(args.out, "w", newline="") as fh:
        fh.write("i,j,similarity\n")
        for k in order:
            i, j = matches.pairs[k]
            fh.write(f"{i},{j},{matches.similarities[k]:.10g}\n")
    print(f"matches={len(matches)}")
    return 0


def _cmd_arch(args) -> int:
    config = archcalc.ModelConfig.named(args.config, args.dim)
    graph = archcalc.build_graph(config)
    rows = archcalc.summarize(graph, args.height, args.width)
    name_w = max(len(r[0]) for r in rows)
    kind_w = max(len(r[1]) for r in rows)
    shape_w = max(len(r[2]) for r in rows)
    for name, kind, shape, params, flops in rows:
        print(f"{name:<{name_w}}  {kind:<{kind_w}}  {shape:>{shape_w}}  "
              f"{params:>8d}  {flops:>12d}")
    params = archcalc.count_params(graph)
    flops = archcalc.estimate_flops(graph, args.height, args.width)
    rf = archcalc.receptive_field(graph)
    print(f"params={params} flops={flops} rf={rf}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epdistill",
        description="Descriptor distillation math, detection loss and keypoint tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="compress a descriptor file to a lower dimension")
    p.add_argument("--input", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--method", choices=("lra", "pca"), default="lra")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("procrustes", help="orthogonally align one descriptor file to another")
    p.add_argument("--target", required=True, help="matrix to be rotated")
    p.add_argument("--source", required=True, help="matrix to align to")
    p.add_argument("--output-aligned", required=True)
    p.set_defaults(func=_cmd_procrustes)

    p = sub.add_parser("distill-demo", help="run the toy distillation trainer")
    p.add_argument("--c-desc", type=int, default=32)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--w-op", type=float, default=0.5)
    p.add_argument("--w-sim", type=float, default=0.1)
    p.add_argument("--compression", choices=("lra", "pca"), default="lra")
    p.add_argument("--no-sim-loss", action="store_true")
    p.add_argument("--seed", type=int, default=None,
                   help=f"RNG seed (precedence: flag > ${SEED_ENV_VAR} > 0)")
    p.add_argument("--teacher-dim", type=int, default=128)
    p.add_argument("--resample-teacher", action="store_true",
                   help="draw a new teacher mini-set every step")
    p.add_argument("--report", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_distill_demo)

    p = sub.add_parser("cache", help="merge primary+flipped keypoints into a heatmap cache")
    p.add_argument("--kps", required=True)
    p.add_argument("--kps-flipped", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--out-heatmap", required=True)
    p.set_defaults(func=_cmd_cache)

    p = sub.add_parser("detect-loss", help="evaluate the patchwise detection loss")
    p.add_argument("--logits", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--kernel", type=int, default=5)
    p.add_argument("--impl", choices=("naive", "fast", "both"), default="both")
    p.set_defaults(func=_cmd_detect_loss)

    p = sub.add_parser("match", help="mutual-nearest-neighbor matching of two descriptor files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("arch", help="per-layer table for a named model configuration")
    p.add_argument("--config", choices=tuple("TSMLE"), required=True)
    p.add_argument("--dim", type=int, choices=(32, 48, 64), required=True)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--width", type=int, default=640)
    p.set_defaults(func=_cmd_arch)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EpdistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for err, code in _EXIT_BY_ERROR:
            if isinstance(exc, err):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
