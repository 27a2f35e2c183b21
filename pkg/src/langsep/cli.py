"""Command-line entry points: synth, train, infer, eval.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

USAGE_EXIT = 1
RUNTIME_EXIT = 2

ABLATION_DIR_NAMES = ("full", "no_language", "no_agim", "img_loss_only")


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that exits with code 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _device() -> str:
    return os.environ.get("LANGSEP_DEVICE", "cpu")


def build_parser() -> CliParser:
    parser = CliParser(prog="langsep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("synth", help="generate a synthetic mixture dataset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--sources", type=Path, help="directory of captioned source images")
    src.add_argument("--toy", type=int, metavar="N",
                     help="generate N procedural captioned sources instead")
    p.add_argument("--count", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mu", type=float, default=0.3, help="recognizability threshold")
    p.add_argument("--blur-max", type=float, default=0.0,
                   help="max Gaussian sigma blurring the reflection source (0 = off)")

    p = sub.add_parser("train", help="train the separation model")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, help="key=value training config file")
    p.add_argument("--ablation", choices=("none", "no_language", "no_agim", "img_loss_only"))
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--channels", type=int)

    p = sub.add_parser("infer", help="separate one mixture image")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--desc1", help="description of the transmission layer")
    p.add_argument("--desc2", help="description of the reflection layer")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint or an ablation grid")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--ckpt", type=Path)
    p.add_argument("--ablation-grid", type=Path, metavar="DIR",
                   help="directory with <variant>/ckpt_final.pt runs")
    p.add_argument("--which", choices=("t", "r", "both"), default="both")
    p.add_argument("--split", default="test")
    p.add_argument("--max-samples", type=int)
    p.add_argument("--json-out", type=Path, help="also write the report as JSON")
    return parser


def cmd_synth(args) -> int:
    from .synthdata import build_dataset, load_source_pairs, read_manifest
    from .toydata import make_toy_sources

    if args.toy is not None:
        sources = make_toy_sources(args.toy, seed=args.seed)
    else:
        sources = load_source_pairs(args.sources)
    manifest = build_dataset(
        sources, count=args.count, seed=args.seed, out_dir=args.out,
        mu=args.mu, blur_sigma_max=args.blur_max,
    )
    stats = json.loads((args.out / "stats.json").read_text(encoding="utf-8"))
    records = read_manifest(manifest)
    print(f"wrote {stats['count']} samples to {args.out}")
    print(f"manifest: {manifest}")
    print(f"caption availability: cap_t {stats['cap_t_rate']:.3f}, "
          f"cap_r {stats['cap_r_rate']:.3f}, both {stats['dual_caption_rate']:.3f}")
    print(f"splits: {stats['splits']}")
    for name, lo, hi in (("alpha", 0.8, 1.0), ("beta", 0.4, 1.0)):
        values = [getattr(rec, name) for rec in records]
        hist, _ = np.histogram(values, bins=10, range=(lo, hi))
        print(f"{name} histogram [{lo}, {hi}]: {hist.tolist()} (mean {np.mean(values):.4f})")
    return 0


def cmd_train(args) -> int:
    from .trainer import TrainConfig, desk_config, fit, load_train_config

    if args.config is not None:
        config = load_train_config(args.config)
    else:
        config = desk_config()
    overrides = {
        "ablation": args.ablation, "seed": args.seed, "epochs": args.epochs,
        "batch_size": args.batch_size, "channels": args.channels,
    }
    applied = {k: v for k, v in overrides.items() if v is not None}
    if applied:
        config = TrainConfig(**{**dataclasses.asdict(config), **applied})
    ckpt = fit(config, args.manifest, args.out, resume=args.resume)
    print(f"final checkpoint: {ckpt}")
    return 0


def cmd_infer(args) -> int:
    from .model import separate_image
    from .synthdata import load_png, save_png
    from .trainer import load_checkpoint, restore_model

    model, vocab, _ = restore_model(load_checkpoint(args.ckpt))
    model.to(_device())
    mixture = load_png(args.image)
    t_hat, r_hat = separate_image(model, vocab, mixture, args.desc1, args.desc2)
    args.out.mkdir(parents=True, exist_ok=True)
    save_png(np.clip(t_hat, 0.0, 1.0), args.out / "T_hat.png")
    save_png(np.clip(r_hat, 0.0, 1.0), args.out / "R_hat.png")
    n_desc = sum(d is not None for d in (args.desc1, args.desc2))
    print(f"separated {args.image} with {n_desc} description(s); wrote {args.out}/T_hat.png "
          f"and {args.out}/R_hat.png")
    return 0


def cmd_eval(args) -> int:
    from . import evalkit
    from .synthdata import read_manifest
    from .trainer import load_checkpoint, restore_model

    if (args.ckpt is None) == (args.ablation_grid is None):
        print("eval: exactly one of --ckpt or --ablation-grid is required", file=sys.stderr)
        return USAGE_EXIT
    if args.ablation_grid is not None:
        variants = {
            name: args.ablation_grid / name / "ckpt_final.pt"
            for name in ABLATION_DIR_NAMES
        }
        report = evalkit.ablation_grid(
            variants, args.manifest, which="t" if args.which == "both" else args.which,
            split=args.split, max_samples=args.max_samples,
        )
        print(evalkit.format_ablation_table(report))
        if args.json_out:
            args.json_out.write_text(json.dumps(report, indent=2), encoding="utf-8")
        return 0

    model, vocab, _ = restore_model(load_checkpoint(args.ckpt))
    model.to(_device())
    records = read_manifest(args.manifest)
    rows = evalkit.evaluate(
        evalkit.model_separator(model, vocab), records, args.manifest.parent,
        which=args.which, split=args.split, max_samples=args.max_samples,
    )
    print(evalkit.format_table(rows))
    if args.json_out:
        args.json_out.write_text(
            json.dumps([row.to_dict() for row in rows], indent=2), encoding="utf-8"
        )
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, ValueError, RuntimeError, OSError) as err:
        print(f"langsep {args.command}: {err}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
