"""``crossd`` command line: bench, check, train-demo, export, import.

Exit codes: 0 success, 1 check/verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

import numpy as np

from . import bench as bench_mod
from . import checks, plotting, transfer
from .convops import ConfigError, KernelBank5D
from .rotparam import RotationParams, RotParamHead
from .tensorcore import ShapeError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _shapes(text):
    try:
        return bench_mod.parse_shapes(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _axis(text):
    try:
        v = np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"axis must be three comma-separated numbers, got {text!r}") from None
    if v.shape != (3,) or np.linalg.norm(v) == 0:
        raise argparse.ArgumentTypeError(f"axis must be a non-zero 3-vector, got {text!r}")
    return v / np.linalg.norm(v)


def _write(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="time conv2d / crossd / acs / conv3d forward passes")
    p.add_argument("--shapes", type=_shapes, default=[bench_mod.DEFAULT_SHAPE], help='"BxCxHxW[,...]"')
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--depth", type=int, default=None, help="volume depth for acs/conv3d (default: kernel)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=None)
    p.add_argument("--precision", choices=("f32", "f64"), default="f32")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--mode", choices=("per-sample", "batch-mean"), default="batch-mean")
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    p.add_argument("--figure", default=None, help="figure path (default: next to --out)")
    p.add_argument("--no-figure", action="store_true")

    p = sub.add_parser("check", help="run invariant suites")
    p.add_argument("--suite", choices=("all",) + checks.SUITES, default="all")
    for name in checks.SUITES:
        p.add_argument(f"--{name}", dest="suite", action="store_const", const=name,
                       help=f"shorthand for --suite {name}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--corrupt-vjp", action="append", default=[], help=argparse.SUPPRESS)

    p = sub.add_parser("train-demo", help="train one Cross-D layer on a synthetic orientation task")
    p.add_argument("--steps", type=_positive_int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default=None, help="loss-trace JSON path (default: stdout)")
    p.add_argument("--figure", default=None)
    p.add_argument("--no-figure", action="store_true")

    p = sub.add_parser("export", help="write a weight archive")
    p.add_argument("path")
    p.add_argument("--from", dest="source", default=None, help="read the layer from an existing archive")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--in-channels", type=_positive_int, default=2)
    p.add_argument("--out-channels", type=_positive_int, default=4)
    p.add_argument("--groups", type=_positive_int, default=1)
    p.add_argument("--rotate", type=float, default=None, metavar="THETA",
                   help="freeze a rotation (radians) and export derived 3D and 2D kernels")
    p.add_argument("--axis", type=_axis, default=np.array([0.0, 0.0, 1.0]), help="rotation axis x,y,z")

    p = sub.add_parser("import", help="read and validate a weight archive")
    p.add_argument("path")
    p.add_argument("--out", default=None, help="write the summary JSON here")
    return parser


def _cmd_bench(args) -> int:
    cfg = bench_mod.BenchConfig(
        shapes=args.shapes, repeats=args.repeats, warmup=args.warmup, kernel=args.kernel,
        seed=args.seed, precision=args.precision, format=args.format, mode=args.mode,
        threads=args.threads, depth=args.depth,
    )
    report = bench_mod.bench(cfg)
    _write(report.render(args.format), args.out)
    fig = args.figure or (plotting.figure_path_for(args.out) if args.out else None)
    if fig and not args.no_figure:
        plotting.bench_figure(report, fig)
        print(f"figure written to {fig}", file=sys.stderr)
    return EXIT_OK


def _cmd_check(args) -> int:
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=args.threads):
        results = checks.run(args.suite, seed=args.seed, corrupt=args.corrupt_vjp)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_FAIL
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .train import TrainConfig, TrainingDiverged, train_demo

    progress = sys.stdout if args.out else sys.stderr
    try:
        result = train_demo(TrainConfig(steps=args.steps, lr=args.lr, seed=args.seed),
                            echo=lambda line: print(line, file=progress))
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _write(json.dumps(result.to_dict(), indent=2), args.out)
    fig = args.figure or (plotting.figure_path_for(args.out) if args.out else None)
    if fig and not args.no_figure:
        plotting.loss_figure(result.losses, fig)
        print(f"figure written to {fig}", file=sys.stderr)
    return EXIT_OK


def _cmd_export(args) -> int:
    if args.source:
        bank, head = transfer.layer_from_tensors(transfer.load_archive(args.source))
    else:
        if args.kernel < 1 or args.kernel % 2 == 0:
            raise UsageError(f"--kernel must be odd and positive, got {args.kernel}")
        if args.in_channels % args.groups or args.out_channels % args.groups:
            raise UsageError("--in-channels and --out-channels must be divisible by --groups")
        rng = np.random.default_rng(args.seed)
        k = args.kernel
        w = rng.normal(size=(args.out_channels, args.in_channels // args.groups, k, k, k))
        bank = KernelBank5D(w / np.sqrt(w[0].size), args.groups)
        head = RotParamHead.random(args.in_channels, rng=rng)
    if args.rotate is None:
        tensors = transfer.layer_tensors(bank, head)
    else:
        params = RotationParams(args.axis, args.rotate)
        tensors = transfer.layer_tensors(transfer.derive_3d_kernels(bank, params))
        tensors["kernels.2d"] = transfer.derive_2d_kernels(bank, params)
    transfer.save_archive(args.path, tensors)
    print(f"wrote {len(tensors)} tensors to {args.path}")
    return EXIT_OK


def _cmd_import(args) -> int:
    tensors = transfer.load_archive(args.path)
    summary = {
        name: {"shape": list(t.shape), "sha256": hashlib.sha256(t.astype("<f8").tobytes()).hexdigest(),
               "l2": float(np.linalg.norm(t))}
        for name, t in tensors.items()
    }
    if "bank.weight" in tensors:
        transfer.layer_from_tensors(tensors)  # validates shapes / groups
    _write(json.dumps(summary, indent=2), args.out)
    return EXIT_OK


COMMANDS = {
    "bench": _cmd_bench,
    "check": _cmd_check,
    "train-demo": _cmd_train,
    "export": _cmd_export,
    "import": _cmd_import,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with status 2 on bad usage
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"crossd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (transfer.ArchiveError, ShapeError, OSError) as exc:
        print(f"crossd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
