"""Command-line entry points.

Exit codes: 0 success, 1 configuration error, 2 input error, 3 numerical
failure during training.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, RunConfig, load_config
from .harness import (ABLATION_AXES, InputError, NumericalError, ablate,
                      enhance, evaluate, make_synthetic, train)
from .imaging import load_image, save_image, white_balance_grayworld_green


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "epochs", None) is not None:
        cfg.epochs = args.epochs
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "input_size", None) is not None:
        cfg.input_size = args.input_size
    return cfg.validate()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilie",
                                     description="Image-event low-light enhancement")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("make-synthetic", help="generate a synthetic dataset")
    add_common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-scenes", type=int, default=8)
    p.add_argument("--n-test", type=int, default=2)
    p.add_argument("--input-size", type=int)

    p = sub.add_parser("train", help="train a model")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--input-size", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])

    p = sub.add_parser("enhance", help="enhance a single image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="run an ablation grid")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--axis", required=True, choices=ABLATION_AXES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)

    p = sub.add_parser("white-balance", help="gray-world white balance a PNG")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "make-synthetic":
            cfg = _config_from_args(args)
            path = make_synthetic(args.out_dir, args.n_scenes, cfg.seed, cfg,
                                  n_test=args.n_test)
            print(path)
        elif args.command == "train":
            cfg = _config_from_args(args)
            ckpt = train(cfg, args.manifest, args.out_dir, max_steps=args.max_steps)
            print(ckpt)
        elif args.command == "eval":
            report = evaluate(args.checkpoint, args.manifest, args.out_dir,
                              split=args.split)
            print(report)
        elif args.command == "enhance":
            enhance(args.checkpoint, args.image, args.events, args.out)
            print(args.out)
        elif args.command == "ablate":
            cfg = _config_from_args(args)
            table = ablate(cfg, args.manifest, args.out_dir, args.axis,
                           max_steps=args.max_steps)
            print(table)
        elif args.command == "white-balance":
            try:
                img = load_image(args.image)
            except FileNotFoundError as exc:
                raise InputError(str(exc)) from exc
            save_image(args.out, white_balance_grayworld_green(img))
            print(args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
