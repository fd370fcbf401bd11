"""Command-line front end: train, infer, and the throughput table.

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys

from .data import load_pairs, load_run
from .infer import infer_dir, load_model, save_model
from .model import UNetSpec
from .train import (TrainConfig, table_csv, throughput_table,
                    train_distributed)


def _gather_pairs(args) -> list:
    if bool(args.run) == bool(args.images):
        raise ValueError("give exactly one of --run <run dir> or "
                         "--images <dir> with --labels <dir>")
    if args.run:
        return load_run(args.run, args.tile_size)
    if not args.labels:
        raise ValueError("--images needs --labels")
    return load_pairs(args.images, args.labels, args.tile_size)


def _spec(args) -> UNetSpec:
    return UNetSpec(input_size=args.tile_size, depth=args.depth,
                    base_channels=args.base_channels, dropout=args.dropout)


def _config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch, epochs=args.epochs, lr=args.lr,
                       val_fraction=args.val_fraction, seed=args.seed,
                       device=args.device)


def cmd_train(args) -> int:
    pairs = _gather_pairs(args)
    result, row = train_distributed(pairs, _spec(args), _config(args),
                                    devices=args.devices)
    for entry in result.history:
        line = (f"epoch {entry['epoch']}: loss {entry['train_loss']:.4f} "
                f"acc {entry['train_acc']:.4f}")
        if "val_acc" in entry:
            line += f" val_loss {entry['val_loss']:.4f} val_acc {entry['val_acc']:.4f}"
        print(line)
    save_model(args.out, result.model)
    print(f"saved {args.out} ({row['devices']} device(s), "
          f"{row['samples_per_s']} samples/s)")
    return 0


def cmd_infer(args) -> int:
    model = load_model(args.model)
    stems = infer_dir(model, args.images, args.out)
    print(f"wrote {len(stems)} label images to {args.out}")
    return 0


def cmd_bench(args) -> int:
    pairs = _gather_pairs(args)
    counts = tuple(int(n) for n in args.devices_list.split(",") if n)
    if not counts:
        raise ValueError("--devices must list at least one count")
    rows = throughput_table(pairs, _spec(args), _config(args), counts)
    text = table_csv(rows)
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def _add_corpus_flags(p) -> None:
    p.add_argument("--run", help="pipeline run directory (manifest, filtered, labels)")
    p.add_argument("--images", help="directory of scene PNGs")
    p.add_argument("--labels", help="directory of label PNGs paired by stem")
    p.add_argument("--tile-size", type=int, default=256)


def _add_train_flags(p) -> None:
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--base-channels", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--device", choices=["cpu", "cuda"], default="cpu")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icetrain",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train", help="train on (tile, label) pairs")
    _add_corpus_flags(p)
    _add_train_flags(p)
    p.add_argument("--devices", type=int, default=1)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict label images for scenes")
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="throughput table across device counts")
    _add_corpus_flags(p)
    _add_train_flags(p)
    p.add_argument("--devices", dest="devices_list", default="1,2")
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
