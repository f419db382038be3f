"""Command-line entry point.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .data import gen_gaussian_pair, load_mnist
from .probe import mi_vs_sample_size, write_curve_csv
from .runner import POLICIES, ConfigError, RunConfig, emit_comparison, resume_with_batch_size, run_experiment

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# flag name -> RunConfig field
_RUN_OVERRIDES = {
    "seed": "seed",
    "epochs": "epochs",
    "policy": "policy",
    "lr": "lr",
    "lr_min": "lr_min",
    "lr_max": "lr_max",
    "probe_size": "probe_size",
    "k": "k",
    "batch_size": "batch_size",
    "dataset": "dataset",
    "mnist_dir": "mnist_dir",
    "out_dir": "out_dir",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_sizes(text: str) -> list[int]:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="log every epoch")
    p = _Parser(prog="infolr", description="MI-driven learning-rate experiments.", parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", parents=[common], help="train with a learning-rate policy")
    run.add_argument("config", nargs="?", help="JSON config file; omitted keys take their defaults")
    run.add_argument("--seed", type=int)
    run.add_argument("--epochs", type=int)
    run.add_argument("--policy", choices=POLICIES)
    run.add_argument("--lr", type=float, help="fixed/target LR; dynamic bounds default to lr/10 and lr*10")
    run.add_argument("--lr-min", type=float)
    run.add_argument("--lr-max", type=float)
    run.add_argument("--probe-size", type=int)
    run.add_argument("--k", type=int, help="KSG neighbour count")
    run.add_argument("--batch-size", type=int)
    run.add_argument("--dataset", choices=("blobs", "mnist"))
    run.add_argument("--mnist-dir")
    run.add_argument("--out-dir")

    curve = sub.add_parser("mi-curve", parents=[common], help="MI estimate mean/std against sample size")
    curve.add_argument("--source", choices=("gaussian", "mnist"), default="gaussian")
    curve.add_argument("--rho", type=float, default=0.9, help="correlation of the Gaussian pair")
    curve.add_argument("--mnist-dir", default="data/mnist")
    curve.add_argument("--sizes", type=_parse_sizes, default=[100, 500, 2000])
    curve.add_argument("--repeats", type=int, default=10)
    curve.add_argument("--k", type=int, default=4)
    curve.add_argument("--pool", type=int, help="Gaussian rows to subsample from (default 10x the largest size)")
    curve.add_argument("--seed", type=int, default=0)
    curve.add_argument("--out", default="mi_curve.csv")

    res = sub.add_parser("resume", parents=[common], help="continue from a checkpoint with a new batch size")
    res.add_argument("checkpoint")
    res.add_argument("--batch-size", type=int, required=True)
    res.add_argument("--window", type=int, default=3, help="value-only epochs after the change")
    res.add_argument("--epochs", type=int, help="total epochs, counting those before the checkpoint")
    res.add_argument("--out-dir", required=True)

    cmp_ = sub.add_parser("compare", parents=[common], help="merge epochs.csv of several runs into one long table")
    cmp_.add_argument("run_dirs", nargs="+")
    cmp_.add_argument("--out", default="comparison.csv")
    return p


def _run_config(args) -> RunConfig:
    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {
        field: getattr(args, flag) for flag, field in _RUN_OVERRIDES.items() if getattr(args, flag) is not None
    }
    cfg = dataclasses.replace(base, **overrides)
    cfg.validate()
    return cfg


def _cmd_run(args) -> int:
    cfg = _run_config(args)
    result = run_experiment(cfg)
    last = result.records[-1]
    print(f"{len(result.records)} epochs -> {cfg.out_dir}; final test_acc {last.test_acc:.4f}, IXY {result.ixy:.4f}")
    return EXIT_OK


def _cmd_mi_curve(args) -> int:
    if args.source == "gaussian":
        x, y = gen_gaussian_pair(args.pool or 10 * max(args.sizes), args.rho, args.seed)
    else:
        data = load_mnist(args.mnist_dir)
        x, y = data.train_x, data.train_labels.astype(np.float64)
    points = mi_vs_sample_size(x, y, args.sizes, args.repeats, args.k, args.seed)
    write_curve_csv(points, args.out)
    for pt in points:
        print(f"n={pt.sample_size}: {pt.mean:.4f} +/- {pt.std:.4f} nats")
    return EXIT_OK


def _cmd_resume(args) -> int:
    result = resume_with_batch_size(args.checkpoint, args.batch_size, args.window, args.epochs, args.out_dir)
    peak = max((r.lr for r in result.records), default=float("nan"))
    print(f"{len(result.records)} epochs -> {args.out_dir}; peak lr {peak:.5g}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    emit_comparison([Path(d) for d in args.run_dirs], args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "mi-curve": _cmd_mi_curve, "resume": _cmd_resume, "compare": _cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
