"""Command-line entry point: ``hetfuse simulate|train|fuse|evaluate``.

Every subcommand accepts ``--config FILE`` holding ``key = value`` lines
whose keys are flag names (``change_fraction`` or ``change-fraction``);
flags given on the command line override the file.

Exit codes: 0 ok, 2 configuration, 3 divergence, 4 strategy mismatch,
5 shape or data problem, 64 usage.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import torch

from hetfuse import __version__
from hetfuse.datagen import SceneSpec, dataset_meta, load_dataset, load_meta, save_dataset, simulate_dataset
from hetfuse.degrade import SpatialDegradeSpec
from hetfuse.errors import (
    BandMismatch,
    ConfigError,
    DegenerateReference,
    DivergenceError,
    FormatError,
    NotDivisible,
    PatchTooLarge,
    ShapeError,
    SizeMismatch,
    StrategyMismatch,
    TooSmall,
)
from hetfuse.imagery import read_raster, write_raster
from hetfuse.loss import LossWeights
from hetfuse.metrics import evaluate_all
from hetfuse.strategy import FusionStrategy
from hetfuse.train import TrainConfig, fuse, load_checkpoint, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_STRATEGY, EXIT_SHAPE, EXIT_USAGE = 0, 2, 3, 4, 5, 64
SHAPE_ERRORS = (ShapeError, SizeMismatch, BandMismatch, NotDivisible, TooSmall, PatchTooLarge,
                DegenerateReference, FormatError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _strategy(text: str) -> FusionStrategy:
    try:
        return FusionStrategy.parse(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown strategy {text!r} (choose hss, st, hsst)") from None


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value file; command-line flags override it")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetfuse", description="Heterogeneous remote-sensing image fusion with a residual cycle GAN.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="write a synthetic dataset directory")
    _add_common(sim)
    sim.add_argument("--out", type=Path, required=True, help="output dataset directory")
    sim.add_argument("--size", type=int, default=64, help="scene height and width (default 64)")
    sim.add_argument("--height", type=int, help="scene height (overrides --size)")
    sim.add_argument("--width", type=int, help="scene width (overrides --size)")
    sim.add_argument("--bands", type=int, default=3, help="MS bands B (default 3)")
    sim.add_argument("--sar-bands", type=int, default=2, help="SAR bands b (default 2)")
    sim.add_argument("--classes", type=int, default=5, help="land-cover classes (default 5)")
    sim.add_argument("--change-fraction", type=float, default=0.2, help="changed area between dates (default 0.2)")
    sim.add_argument("--speckle-looks", type=int, default=16, help="SAR equivalent number of looks (default 16)")
    sim.add_argument("--cloud-fraction", type=float, default=0.0, help="cloud cover of the LR input (default 0)")
    sim.add_argument("--fill-value", type=float, default=1.0, help="value written under clouds (default 1)")
    sim.add_argument("--ratio", type=int, default=4, help="spatial resolution ratio S (default 4)")
    sim.add_argument("--blur-sigma", type=float, help="Gaussian blur std at HR scale (default S/2)")
    sim.add_argument("--scenes", type=int, default=1, help="number of scenes, seeds seed..seed+n-1 (default 1)")

    tr = sub.add_parser("train", help="train the four networks on a dataset")
    _add_common(tr)
    tr.add_argument("--dataset", type=Path, required=True, help="dataset directory written by simulate")
    tr.add_argument("--out", type=Path, required=True, help="run directory (checkpoint/ and losses.csv)")
    tr.add_argument("--strategy", type=_strategy, default=FusionStrategy.HSST, help="hss, st or hsst (default hsst)")
    tr.add_argument("--steps", type=int, default=1000, help="training steps (default 1000)")
    tr.add_argument("--batch", type=int, default=4, help="patches per step N (default 4)")
    tr.add_argument("--patch", type=int, default=32, help="patch size, multiple of 4 (default 32)")
    tr.add_argument("--lr", type=float, default=2e-4, help="Adam learning rate (default 2e-4)")
    tr.add_argument("--lr-decay-start", type=int, default=0,
                    help="decay lr linearly to 0 after this step (default 0: constant)")
    tr.add_argument("--beta1", type=float, default=0.5, help="Adam beta1 (default 0.5)")
    tr.add_argument("--beta2", type=float, default=0.999, help="Adam beta2 (default 0.999)")
    tr.add_argument("--lambda", dest="lam", type=float, default=10.0, help="content weight (default 10)")
    tr.add_argument("--lambda1", dest="lam1", type=float, default=1.0, help="fusion L1 weight (default 1)")
    tr.add_argument("--lambda2", dest="lam2", type=float, default=1.0, help="cycle L1 weight (default 1)")
    tr.add_argument("--cloud", action="store_true", help="mask the Resize branch with each scene's cloud mask")
    tr.add_argument("--checkpoint-interval", type=int, default=0, help="save every k steps (0: end only)")
    tr.add_argument("--width", type=int, default=64, help="generator base width (default 64)")
    tr.add_argument("--res-blocks", type=int, default=6, help="residual blocks (default 6)")
    tr.add_argument("--disc-widths", type=_int_tuple, default=(64, 128, 256, 512),
                    help="discriminator widths, comma separated (default 64,128,256,512)")

    fu = sub.add_parser("fuse", help="run the forward generator on one dataset scene")
    _add_common(fu)
    fu.add_argument("--checkpoint", type=Path, required=True, help="checkpoint directory")
    fu.add_argument("--dataset", type=Path, required=True, help="dataset directory")
    fu.add_argument("--scene", type=int, default=0, help="scene index (default 0)")
    fu.add_argument("--strategy", type=_strategy, help="observation strategy (default: from the checkpoint)")
    fu.add_argument("--out", type=Path, required=True, help="output BIRF file")

    ev = sub.add_parser("evaluate", help="print quality indices of a result against a reference")
    _add_common(ev)
    ev.add_argument("--result", type=Path, required=True, help="fused BIRF file")
    ev.add_argument("--reference", type=Path, required=True, help="reference BIRF file")
    ev.add_argument("--ratio", type=float, default=1.0, help="ERGAS resolution ratio h/l (default 1)")
    ev.add_argument("--peak", type=float, default=2.0, help="PSNR/SSIM dynamic range (default 2)")
    return parser


def read_config_file(path: Path) -> dict[str, str]:
    """``key = value`` lines; ``#`` and ``;`` start comments."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string("[config]\n" + Path(path).read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError("config", f"malformed file {path}: {exc}") from None
    return dict(cp["config"])


def _config_argv(sub: argparse.ArgumentParser, values: dict[str, str]) -> list[str]:
    """Translate file entries into flag tokens placed before the real argv."""
    flags = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                flags[opt[2:].replace("-", "_")] = (opt, action)
    out = []
    for key, value in values.items():
        norm = key.strip().replace("-", "_")
        if norm not in flags or norm in ("config", "help"):
            raise ConfigError(norm, "unknown configuration key")
        opt, action = flags[norm]
        if isinstance(action, argparse._StoreTrueAction):
            if value.strip().lower() in ("1", "true", "yes", "on"):
                out.append(opt)
            elif value.strip().lower() not in ("0", "false", "no", "off"):
                raise ConfigError(norm, f"expected a boolean, got {value!r}")
        else:
            out += [opt, value.strip()]
    return out


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        merged = [args.command] + _config_argv(sub, read_config_file(args.config)) + list(argv[1:])
        args = parser.parse_args(merged)
    return args


# ------------------------------------------------------------------ commands

def cmd_simulate(args) -> int:
    spec = SceneSpec(
        height=args.height or args.size, width=args.width or args.size, bands=args.bands,
        sar_bands=args.sar_bands, n_classes=args.classes, change_fraction=args.change_fraction,
        speckle_looks=args.speckle_looks, cloud_fraction=args.cloud_fraction, ratio=args.ratio, seed=args.seed,
    )
    if args.scenes < 1:
        raise ConfigError("scenes", "must be >= 1")
    if not -1 <= args.fill_value <= 1:
        raise ConfigError("fill_value", "must lie in [-1, 1]")
    if args.blur_sigma is not None and not args.blur_sigma >= 0:
        raise ConfigError("blur_sigma", "must be >= 0")
    degrade = SpatialDegradeSpec(args.ratio, args.blur_sigma)
    observations = simulate_dataset(spec, degrade, args.scenes, args.fill_value)
    save_dataset(args.out, observations, dataset_meta(spec, degrade, args.scenes, args.fill_value))
    print(f"wrote {args.scenes} scene(s) to {args.out}")
    return EXIT_OK


def _train_config(args, meta: dict) -> TrainConfig:
    checks = {"steps": args.steps >= 0, "batch": args.batch >= 1,
              "patch": args.patch >= 4 and args.patch % 4 == 0, "lr": args.lr >= 0,
              "lr_decay_start": args.lr_decay_start >= 0,
              "checkpoint_interval": args.checkpoint_interval >= 0,
              "width": args.width >= 1, "res_blocks": args.res_blocks >= 1,
              "disc_widths": len(args.disc_widths) == 4 and min(args.disc_widths) >= 1}
    for name, ok in checks.items():
        if not ok:
            raise ConfigError(name, f"invalid value {getattr(args, name)!r}")
    try:
        weights = LossWeights(args.lam, args.lam1, args.lam2)
    except ValueError as exc:
        raise ConfigError("lambda", str(exc)) from None
    degrade = meta.get("degrade", {})
    scene = meta.get("scene", {})
    return TrainConfig(
        strategy=args.strategy, batch_size=args.batch, steps=args.steps, lr=args.lr,
        lr_decay_start=args.lr_decay_start, betas=(args.beta1, args.beta2), weights=weights,
        degrade=SpatialDegradeSpec(int(degrade.get("ratio", 4)), degrade.get("blur_sigma")),
        cloud=args.cloud, fill_value=float(meta.get("fill_value", 1.0)), seed=args.seed,
        checkpoint_interval=args.checkpoint_interval, patch_size=args.patch,
        bands=int(scene.get("bands", 3)), sar_bands=int(scene.get("sar_bands", 2)),
        n_res_blocks=args.res_blocks, base_width=args.width, disc_widths=args.disc_widths,
    )


def _load_meta(path: Path) -> dict:
    if not (Path(path) / "meta.json").exists():
        raise ConfigError("dataset", f"{path} is not a dataset directory (no meta.json)")
    return load_meta(path)


def cmd_train(args) -> int:
    meta = _load_meta(args.dataset)
    config = _train_config(args, meta)
    dataset = load_dataset(args.dataset, config.strategy)
    _, rows = train(config, dataset, args.out)
    if rows:
        last = rows[-1]
        print(",".join(f"{k}={last[k]:.6g}" if k != "step" else f"step={last[k]}" for k in last))
    else:
        print("step=0 (initial checkpoint written)")
    return EXIT_OK


def cmd_fuse(args) -> int:
    if not (args.checkpoint / "manifest.json").exists():
        raise ConfigError("checkpoint", f"{args.checkpoint} is not a checkpoint directory")
    state = load_checkpoint(args.checkpoint)
    _load_meta(args.dataset)
    strategy = args.strategy or state.strategy
    dataset = load_dataset(args.dataset, strategy)
    if not 0 <= args.scene < len(dataset):
        raise ConfigError("scene", f"index {args.scene} outside 0..{len(dataset) - 1}")
    result = fuse(state, dataset[args.scene])
    write_raster(result, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    for name in ("result", "reference"):
        if not getattr(args, name).is_file():
            raise ConfigError(name, f"{getattr(args, name)} does not exist")
    if not args.ratio > 0:
        raise ConfigError("ratio", "must be positive")
    if not args.peak > 0:
        raise ConfigError("peak", "must be positive")
    report = evaluate_all(read_raster(args.result), read_raster(args.reference), args.ratio, args.peak)
    print(report.csv_header())
    print(report.csv_row())
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "fuse": cmd_fuse, "evaluate": cmd_evaluate}


def _apply_threads() -> None:
    value = os.environ.get("HETFUSE_THREADS")
    if value:
        try:
            n = int(value)
        except ValueError:
            raise ConfigError("HETFUSE_THREADS", f"expected an integer, got {value!r}") from None
        if n < 1:
            raise ConfigError("HETFUSE_THREADS", "must be >= 1")
        torch.set_num_threads(n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parse_args(argv)
        _apply_threads()
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except StrategyMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STRATEGY
    except SHAPE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
