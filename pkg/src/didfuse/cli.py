"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baseline, fusion, metrics, net
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .errors import DataError, NumericError
from .io import PairedDataset, load_image, preprocess, save_image, to_uint8
from .tensor import Mode
from .trainer import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("didfuse")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="didfuse", description="Deep image decomposition for infrared/visible fusion.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train the autoencoder on a directory of pairs")
    p.add_argument("--data", required=True, type=Path, help="directory with ir/ and vis/")
    p.add_argument("--out", required=True, type=Path, help="checkpoint to write")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", type=Path, help="key = value file")
    p.add_argument("--log", type=Path, help="per-epoch JSON-lines log")

    p = sub.add_parser("decompose", help="write channel-0 background/detail maps")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--format", choices=("pgm", "png"), default="pgm")

    p = sub.add_parser("fuse", help="fuse one infrared/visible pair")
    p.add_argument("--ckpt", type=Path)
    p.add_argument("--ir", required=True, type=Path)
    p.add_argument("--vis", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--strategy", choices=sorted(fusion.STRATEGY_NAMES), default="sum")
    p.add_argument("--classical", choices=("opt", "box"), help="use the two-scale baseline instead of a model")
    p.add_argument("--lam", type=float, default=baseline.Optimize.lam)
    p.add_argument("--radius", type=int, default=baseline.Box.radius)

    p = sub.add_parser("eval", help="score fusion strategies on a directory of pairs")
    p.add_argument("--ckpt", type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--strategy", nargs="+", choices=sorted(fusion.STRATEGY_NAMES), default=None)
    p.add_argument("--classical", nargs="+", choices=("opt", "box"), default=[])
    p.add_argument("--report", required=True, type=Path, help="mean±std table (TSV)")
    p.add_argument("--lam", type=float, default=baseline.Optimize.lam)
    p.add_argument("--radius", type=int, default=baseline.Box.radius)
    return parser


def _classical_method(name, args):
    return baseline.Optimize(args.lam) if name == "opt" else baseline.Box(args.radius)


def _model_fuser(params, strategy):
    def fuse(ir, vis):
        out = fusion.fuse_images(preprocess(ir), preprocess(vis), params, strategy)
        return out[0, 0].astype(np.float64) * 255.0

    return fuse


def _even(img):
    return img[: img.shape[0] // 2 * 2, : img.shape[1] // 2 * 2]


def _classical_fuser(method):
    def fuse(ir, vis):
        return baseline.classical_fuse(_even(ir), _even(vis), method)

    return fuse


def cmd_train(args):
    config = load_config(args.config) if args.config else TrainConfig()
    overrides = {k: v for k, v in (("epochs", args.epochs), ("batch_size", args.batch), ("seed", args.seed))
                 if v is not None}
    config = replace(config, **overrides)
    dataset = PairedDataset.from_directory(args.data, "train")
    pairs = [dataset[i] for i in range(len(dataset))]
    params, history = train(pairs, config, log_path=args.log)
    save_checkpoint(params, config, args.out)
    print(f"trained {len(history.epochs)} epochs ({history.steps} steps), "
          f"final loss {history.epochs[-1].loss.total:.5f} -> {args.out}")


def cmd_decompose(args):
    params, _ = load_checkpoint(args.ckpt)
    dec = net.decompose(preprocess(load_image(args.image)), params, Mode.EVAL)
    for name, maps in (("background", dec.background), ("detail", dec.detail)):
        path = Path(f"{args.out_prefix}_{name}.{args.format}")
        save_image(path, to_uint8((maps[0, 0] + 1.0) / 2.0))
        print(path)


def cmd_fuse(args):
    ir, vis = load_image(args.ir), load_image(args.vis)
    if ir.shape != vis.shape:
        raise DataError(f"image sizes differ: ir {ir.shape[1]}x{ir.shape[0]} vs vis {vis.shape[1]}x{vis.shape[0]}")
    if args.classical:
        fused = _classical_fuser(_classical_method(args.classical, args))(ir, vis)
    else:
        if args.ckpt is None:
            raise _UsageError("fuse needs --ckpt unless --classical is given")
        params, _ = load_checkpoint(args.ckpt)
        fused = _model_fuser(params, fusion.parse_strategy(args.strategy))(ir, vis)
    save_image(args.out, metrics.quantize(fused))
    print(args.out)


def cmd_eval(args):
    strategies = args.strategy
    if strategies is None:
        strategies = [] if args.classical else ["sum"]
    if strategies and args.ckpt is None:
        raise _UsageError("eval needs --ckpt to score model strategies")
    params = load_checkpoint(args.ckpt)[0] if strategies else None
    dataset = PairedDataset.from_directory(args.data)
    summaries = []
    for name in strategies:
        fuser = _model_fuser(params, fusion.parse_strategy(name))
        summaries.append(metrics.score_pairs(dataset.iter_named(), fuser, name))
    for name in args.classical:
        fuser = _classical_fuser(_classical_method(name, args))
        summaries.append(metrics.score_pairs(dataset.iter_named(), fuser, f"classical-{name}"))
    raw = metrics.write_report(args.report, summaries)
    sys.stdout.write(metrics.format_table(summaries))
    skipped = max(s.skipped for s in summaries) + len(dataset.unmatched)
    print(f"scored {len(summaries[0].reports)} pairs, skipped {skipped}; per-image values in {raw}")


class _UsageError(Exception):
    pass


COMMANDS = {"train": cmd_train, "decompose": cmd_decompose, "fuse": cmd_fuse, "eval": cmd_eval}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"didfuse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"didfuse: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"didfuse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        parser.print_usage(sys.stderr)
        print(f"didfuse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def run():
    sys.exit(main())
