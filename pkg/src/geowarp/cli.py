"""Command-line entry point: ``geowarp {gradcheck,warp,align,synth}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 gradient check
failure. Results go to stdout; diagnostics go to stderr.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import alignment, gradcheck, io
from .robust import KINDS, RobustLoss

log = logging.getLogger("geowarp")

EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_GRADCHECK = 3


def build_parser():
    parser = argparse.ArgumentParser(prog="geowarp", description="Differentiable geometric warps and photometric alignment.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference checks of every backward pass")
    g.add_argument("--module", choices=gradcheck.MODULES, default="all")
    g.add_argument("--trials", type=int, default=10)
    g.add_argument("--tol", type=float, default=None, help="override the per-suite tolerance")
    g.add_argument("--seed", type=int, default=0)

    w = sub.add_parser("warp", help="resample an image through one rigid warp")
    w.add_argument("--image", required=True)
    w.add_argument("--depth", required=True)
    w.add_argument("--pose", required=True, help="'v1 v2 v3 t1 t2 t3' or a file holding it")
    w.add_argument("--intrinsics", required=True, help="'fx fy px py' or a file holding it")
    w.add_argument("--out", required=True, help="output image; the mask goes next to it as *_mask.pgm")

    a = sub.add_parser("align", help="estimate the pose between two images")
    a.add_argument("--ref", required=True)
    a.add_argument("--live", required=True)
    a.add_argument("--depth")
    a.add_argument("--intrinsics", required=True)
    a.add_argument("--mode", choices=alignment.MODES, required=True)
    a.add_argument("--loss", choices=KINDS, default="l2")
    a.add_argument("--loss-scale", type=float, default=None)
    a.add_argument("--levels", type=int, default=1)
    a.add_argument("--max-iters", type=int, default=200)
    a.add_argument("--tol", type=float, default=1e-8)
    a.add_argument("--step-rule", choices=("bb", "fixed"), default="bb")
    a.add_argument("--initial-step", type=float, default=1.0)
    a.add_argument("--out-dir", required=True)

    s = sub.add_parser("synth", help="render a live image from a base image, depth and pose")
    s.add_argument("--image", required=True)
    s.add_argument("--depth", required=True)
    s.add_argument("--pose", required=True)
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma in [0, 1] intensity units")
    s.add_argument("--seed", type=int, default=0)
    return parser


def cmd_gradcheck(args):
    if args.trials < 1:
        raise ValueError("--trials must be >= 1")
    ok = True
    for result in gradcheck.run(args.module, args.trials, args.tol, args.seed):
        print(result.line(), flush=True)
        ok &= result.passed
    return 0 if ok else EXIT_GRADCHECK


def cmd_warp(args):
    image = io.read_image(args.image)
    depth = io.read_depth(args.depth)
    if depth.shape != image.shape[:2]:
        raise ValueError(f"depth {depth.shape} does not match image {image.shape[:2]}")
    warped, mask = io.warp_image(image, depth, io.parse_pose(args.pose), io.parse_intrinsics(args.intrinsics))
    out = Path(args.out)
    io.write_image(warped, out)
    io.write_image(mask, out.with_name(out.stem + "_mask.pgm"))
    print(f"valid_fraction {mask.mean():.6f}")
    return 0


def _snapshot_iterations(n):
    """Iteration 0, every tenth iteration, and the last."""
    return sorted(set(range(0, n + 1, 10)) | {n})


def cmd_align(args):
    ref = io.read_image(args.ref)
    live = io.read_image(args.live)
    depth = io.read_depth(args.depth) if args.depth else None
    problem = alignment.AlignmentProblem(ref, live, io.parse_intrinsics(args.intrinsics), depth,
                                         RobustLoss(args.loss, args.loss_scale), args.mode)
    config = alignment.AlignConfig(max_iters=args.max_iters, tol=args.tol,
                                   initial_step=args.initial_step, step_rule=args.step_rule)
    result = alignment.coarse_to_fine_align(problem, args.levels, config)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = result.cost_trace
    for it in _snapshot_iterations(len(trace) - 1):
        _, residuals, mask = alignment.photometric_cost(problem, trace[it].params)
        io.write_residual(residuals, mask, out / f"residual_{it:04d}.pgm")
    with open(out / "trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "cost", "step", "valid_fraction"])
        for e in trace:
            writer.writerow([e.iteration, repr(e.cost), repr(e.step), repr(e.valid_fraction)])
    pose = np.concatenate([result.params, np.zeros(6 - len(result.params))])
    line = io.format_pose(pose)
    (out / "pose.txt").write_text(line + "\n")
    print(line)
    log.info("cost %.6g -> %.6g in %d iterations, converged=%s",
             result.initial_cost, result.final_cost, len(trace) - 1, result.converged)
    return 0


def cmd_synth(args):
    image = io.read_image(args.image)
    depth = io.read_depth(args.depth)
    pair = io.synth_pair(image, depth, io.parse_pose(args.pose), io.parse_intrinsics(args.intrinsics),
                         seed=args.seed, noise=args.noise)
    saved = pair.save(args.out_dir)
    print(f"ref {saved.ref_image}")
    print(f"live {saved.live_image}")
    print(f"depth {saved.depth}")
    print(f"valid_fraction {pair.mask.mean():.6f}")
    return 0


COMMANDS = {"gradcheck": cmd_gradcheck, "warp": cmd_warp, "align": cmd_align, "synth": cmd_synth}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"geowarp {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
