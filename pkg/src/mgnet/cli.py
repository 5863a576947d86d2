"""Command line entry point: ``mgnet {train,eval,infer,synth}``."""
from __future__ import annotations

import argparse
import glob
import logging
import sys

from .checkpoint import Checkpoint
from .data import DatasetLayout, load_dataset, synth_generate
from .pipeline import TrainConfig, evaluate, infer, load_config, train


def _train(args):
    cfg = load_config(args.config)
    samples = load_dataset(DatasetLayout(args.data, args.split), cfg.input_size)
    result = train(cfg, samples, out_dir=args.out)
    last = result.log[-1]
    print(f"trained {last['step'] + 1} steps, final loss {last['loss']:.4f} -> {args.out}")


def _eval(args):
    ckpt = Checkpoint.load(args.ckpt)
    size = TrainConfig.from_dict(ckpt.config).input_size
    report = evaluate(ckpt, load_dataset(DatasetLayout(args.data, args.split), size))
    report.to_json(args.report)
    if args.csv:
        report.to_csv(args.csv)
    print(f"n={report.n_images} mIoU={report.miou:.2f} MAE={report.mae:.4f} mBER={report.mber:.2f}")


def _infer(args):
    paths = sorted(glob.glob(args.images))
    if not paths:
        raise SystemExit(f"no images match {args.images!r}")
    written = infer(Checkpoint.load(args.ckpt), paths, args.out, dump_trace=args.dump_trace)
    print(f"wrote {len(written)} files to {args.out}")


def _synth(args):
    layout = synth_generate(args.n, args.size, args.seed, args.out, split=args.split)
    print(f"wrote {args.n} samples to {layout.root / layout.split}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgnet")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="JSON or TOML file with TrainConfig fields")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument("--split", default="train")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="JSON report path")
    p.add_argument("--split", default="test")
    p.add_argument("--csv", default=None, help="optional per-image CSV")
    p.set_defaults(func=_eval)

    p = sub.add_parser("infer", help="write probability and mask PNGs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--images", required=True, help="glob pattern")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-trace", action="store_true", help="also save one panel per refinement step")
    p.set_defaults(func=_infer)

    p = sub.add_parser("synth", help="generate a synthetic glass dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.set_defaults(func=_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
