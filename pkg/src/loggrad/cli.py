"""Command-line entry point: ``loggrad <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from pydantic import ValidationError

from . import experiments as X
from .config import PROFILES, load_config
from .preproc import InputFormat
from .sensor_io import DatasetError
from .tinynet import CheckpointError, TrainingError

FORMAT_CHOICES = [f.value for f in InputFormat]


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output directory (default: config 'out' or ./runs)")
    common.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    common.add_argument("--profile", choices=PROFILES, help="default set (desk or paper)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="loggrad",
                                description="Log-gradient input experiments for tiny CNNs.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="build dataset, manifests and previews")

    t = sub.add_parser("train", parents=[common], help="train one 2conv1fc model")
    t.add_argument("--format", required=True, choices=FORMAT_CHOICES)
    t.add_argument("--c1", type=int, required=True)
    t.add_argument("--c2", type=int)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--brightness", type=_positive_float, default=1.0)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")

    sc = sub.add_parser("sweep-channels", parents=[common], help="accuracy vs c1")
    sc.add_argument("--formats", nargs="+", choices=FORMAT_CHOICES)
    sc.add_argument("--c1", type=int, nargs="+", dest="c1_list")

    sb = sub.add_parser("sweep-brightness", parents=[common], help="accuracy vs brightness")
    sb.add_argument("--formats", nargs="+", choices=FORMAT_CHOICES)

    s = sub.add_parser("similarity", parents=[common], help="filter similarity reports")
    s.add_argument("--checkpoint", help="analyse this model instead of training new ones")
    s.add_argument("--formats", nargs="+", choices=FORMAT_CHOICES)

    r = sub.add_parser("reconstruct", parents=[common], help="2conv RAW reconstruction")
    r.add_argument("--formats", nargs="+", choices=FORMAT_CHOICES)
    return p


def run(args) -> dict:
    cfg = load_config(args.config, args.profile, seed=args.seed, out=args.out)
    cmd = args.command
    if cmd == "prepare":
        r = X.cmd_prepare(cfg)
        return {"manifest": str(r["manifest"]), "counts": r["counts"]}
    if cmd == "train":
        r = X.cmd_train(cfg, args.format, args.c1, args.c2)
        return {"checkpoint": str(r["checkpoint"]), "test_accuracy": r["test_acc"]}
    if cmd == "eval":
        r = X.cmd_eval(cfg, args.checkpoint, args.brightness, args.split)
        return {"accuracy": r["accuracy"], "loss": r["loss"]}
    if cmd == "sweep-channels":
        rows = X.cmd_sweep_channels(cfg, formats=args.formats, c1_list=args.c1_list)
        return {f"{r.fmt}/c1={r.c1}": r.value for r in rows}
    if cmd == "sweep-brightness":
        rows = X.cmd_sweep_brightness(cfg, formats=args.formats)
        return {f"{r.fmt}/b={r.b:g}": r.value for r in rows}
    if cmd == "similarity":
        r = X.cmd_similarity(cfg, args.checkpoint, formats=args.formats)
        return {f"{row.fmt}/{row.metric}": row.value for row in r["rows"]}
    if cmd == "reconstruct":
        r = X.cmd_reconstruct(cfg, formats=args.formats)
        return {fmt: {"initial_mse": v["initial"], "final_mse": v["final"], "grid": str(v["grid"])}
                for fmt, v in r["results"].items()}
    raise ValueError(f"unknown command {cmd}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = run(args)
    except (ValidationError, ValueError, FileNotFoundError, DatasetError, CheckpointError,
            TrainingError, OSError) as exc:
        print(f"loggrad {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
