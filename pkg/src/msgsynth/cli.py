"""Command-line entry point.

Exit codes: 0 on success, 1 on a validation error (bad usage, bad config,
unusable input data), 2 on a runtime failure (training divergence, I/O
errors, a failing self-check).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .audit import audit_shapes
from .checkpoint import CheckpointError
from .classifier import (
    MiniResNet,
    TransferConfig,
    apply_transfer,
    build_classifier,
    predict,
    train_classifier,
)
from .config import ConfigError, read_flat_config, with_overrides
from .data import (
    DataError,
    ingest_directory,
    load_images,
    make_split,
    read_split_manifest,
    restrict,
    save_png,
    write_split_manifest,
)
from .experiment import ExperimentPlan, run_experiment_matrix
from .gan_train import GanTrainingConfig, TrainState, generate_images, train_gan
from .gradcheck_suite import format_results, run_suite
from .msggan import GeneratorSpec
from .report import ConfusionMatrix, MetricsReport, compute_metrics, emit_report

log = logging.getLogger("msgsynth")

CLASS_LABELS = {"pos": 1, "neg": 0}
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0,
                        help="master seed (default 0)")
    parser.add_argument("--config", default=default, help="flat key = value config file")
    parser.add_argument("--out", default=argparse.SUPPRESS if suppress else "out",
                        help="output directory (default ./out)")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="msgsynth", description="Multi-scale GAN synthesis and real/synthetic evaluation.")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_globals(p, suppress=True)
        return p

    p = command("split", "index a corpus and write the seeded split manifest")
    p.add_argument("--data", required=True, help="corpus root holding 0/ and 1/")
    p.add_argument("--scale", action="store_true", help="scale pool sizes to the corpus size")
    p.add_argument("--train-frac", type=float, default=0.7)

    p = command("train-gan", "train one class-conditional multi-scale GAN")
    p.add_argument("--class", dest="cls", choices=sorted(CLASS_LABELS), required=True)
    p.add_argument("--data", required=True, help="corpus root holding 0/ and 1/")
    p.add_argument("--split", help="split manifest; restricts training to its gan_pool")
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--steps", type=int, help="total optimizer steps (overrides config)")
    p.add_argument("--channels", type=_int_list, help="per-block channel widths, coarsest first")
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--resume", action="store_true", help="continue from the run's checkpoint")

    p = command("generate", "sample PNGs from a trained generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--class", dest="cls", choices=sorted(CLASS_LABELS), required=True)
    p.add_argument("--batch-size", type=int, default=64)

    def classifier_flags(p):
        p.add_argument("--backbone", help="classifier checkpoint providing backbone weights")
        p.add_argument("--no-freeze", action="store_true", help="train every layer")
        p.add_argument("--epochs", type=int)
        p.add_argument("--full", action="store_true", help="224px input with standard widths")

    p = command("train-classifier", "train the residual classifier on a labeled corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--split", help="split manifest; trains on its subset (see --subset)")
    p.add_argument("--subset", default="train")
    classifier_flags(p)

    p = command("evaluate", "score a classifier checkpoint on a labeled corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", help="split manifest; evaluates its subset (see --subset)")
    p.add_argument("--subset", default="test")
    p.add_argument("--name", default="Evaluation", help="row label in the report")
    p.add_argument("--input-size", type=int)

    p = command("experiment-matrix", "run the four train/test scenarios and write reports")
    p.add_argument("--real", required=True, help="real corpus root")
    p.add_argument("--synth", required=True, help="synthetic corpus root")
    p.add_argument("--split", help="real-corpus split manifest (cls_pool evaluated, gan_pool for pretext)")
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds (default: --seed)")
    p.add_argument("--parallel", action="store_true", help="run scenarios as separate processes")
    classifier_flags(p)

    p = command("gradcheck", "run the finite-difference gradient suite")
    p.add_argument("--quick", action="store_true", help="skip the multi-scale critic penalty check")

    p = command("audit-shapes", "compare layer output shapes with the reference tables")
    p.add_argument("--depth", type=int, default=9)
    p.add_argument("--execute", action="store_true", help="also run a real forward pass (depth <= 6)")
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def _config_values(args) -> dict:
    return read_flat_config(args.config) if args.config else {}


def _cmd_split(args) -> int:
    ds = ingest_directory(args.data)
    plan = make_split(ds, args.seed, scale=args.scale, train_frac=args.train_frac)
    path = write_split_manifest(plan, ds, Path(args.out) / "split.csv")
    counts = ds.counts
    print(f"ingested: {counts[0]} negative + {counts[1]} positive = {len(ds)}")
    for name, idx in plan.subsets().items():
        print(f"{name}: {len(idx)}")
    print(f"manifest: {path}")
    return EXIT_OK


def _gan_config(args) -> GanTrainingConfig:
    cfg = with_overrides(GanTrainingConfig(seed=args.seed), _config_values(args))
    changes = {}
    if args.steps is not None:
        changes["total_steps"] = args.steps
    if args.channels is not None:
        changes["channels"] = args.channels
    if args.latent_dim is not None:
        changes["latent_dim"] = args.latent_dim
    return replace(cfg, **changes)


def _cmd_train_gan(args) -> int:
    cfg = _gan_config(args)
    label = CLASS_LABELS[args.cls]
    spec = GeneratorSpec(depth=args.depth, latent_dim=cfg.latent_dim, channels=cfg.channels)
    ds = ingest_directory(args.data)
    if args.split:
        ds = restrict(ds, read_split_manifest(args.split).get("gan_pool", []))
    indices = [i for i, r in enumerate(ds.records) if r.label == label]
    if not indices:
        raise DataError(f"no images of class {args.cls} to train on")
    images, _ = load_images(ds, indices, spec.output_resolution)
    run_dir = Path(args.out) / f"gan_{args.cls}"
    ckpt = run_dir / "checkpoint"
    if args.resume and (ckpt / "manifest.txt").is_file():
        state = TrainState.from_checkpoint(ckpt)
        print(f"resuming from step {state.step}")
    else:
        state = TrainState.create(spec, seed=cfg.seed)
    remaining = max(cfg.total_steps - state.step, 0)
    t0 = time.perf_counter()
    history = train_gan(state, images, cfg, remaining, out_dir=run_dir)
    last = history[-1] if history else None
    print(f"trained {len(history)} steps on {len(images)} images in {time.perf_counter() - t0:.1f}s")
    if last:
        print(f"final d_loss={last['d_loss']:.4f} g_loss={last['g_loss']:.4f} gp={last['gp']:.4f}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def _cmd_generate(args) -> int:
    if args.count < 0:
        raise ConfigError("--count must be non-negative")
    state = TrainState.from_checkpoint(args.checkpoint)
    label = CLASS_LABELS[args.cls]
    target = Path(args.out) / str(label)
    target.mkdir(parents=True, exist_ok=True)
    rng_seed = args.seed
    written = 0
    for start in range(0, args.count, args.batch_size):
        n = min(args.batch_size, args.count - start)
        batch = generate_images(state.generator, n, seed=[rng_seed, label, start])
        for i, img in enumerate(batch):
            save_png(img, target / f"synth_{args.cls}_{start + i:06d}.png")
        written += n
    print(f"wrote {written} images to {target}")
    return EXIT_OK


def _transfer_config(args, input_size: Optional[int] = None) -> TransferConfig:
    base = TransferConfig.full(seed=args.seed) if getattr(args, "full", False) else TransferConfig(seed=args.seed)
    cfg = with_overrides(base, {k: v for k, v in _config_values(args).items()
                                if k in TransferConfig.__dataclass_fields__})
    changes = {}
    if getattr(args, "backbone", None):
        changes["backbone"] = args.backbone
    if getattr(args, "no_freeze", False):
        changes["freeze_backbone"] = False
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if input_size is not None:
        changes["input_size"] = input_size
    return replace(cfg, **changes)


def _subset(ds, split, subset):
    if not split:
        return ds
    subsets = read_split_manifest(split)
    if subset not in subsets:
        raise DataError(f"split manifest has no subset {subset!r}")
    return restrict(ds, subsets[subset])


def _cmd_train_classifier(args) -> int:
    cfg = _transfer_config(args)
    ds = _subset(ingest_directory(args.data), args.split, args.subset)
    images, labels = load_images(ds, None, cfg.input_size)
    net = apply_transfer(build_classifier(cfg.resnet_spec(), seed=cfg.seed), cfg)
    net, curve = train_classifier(net, images, labels, cfg)
    out = Path(args.out) / "classifier"
    net.save(out, {"seed": cfg.seed, "input_size": cfg.input_size})
    (out / "loss.csv").write_text("epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(curve)))
    pred, _ = predict(net, images, cfg.batch_size)
    print(f"trained {len(curve)} epochs on {len(labels)} images; final loss {curve[-1]:.4f}; "
          f"train accuracy {(pred == labels).mean():.4f}")
    print(f"checkpoint: {out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from .checkpoint import read_manifest
    meta = read_manifest(args.checkpoint)
    size = args.input_size or int(meta.get("input_size", 64))
    net = MiniResNet.load(args.checkpoint)
    ds = _subset(ingest_directory(args.data), args.split, args.subset)
    images, labels = load_images(ds, None, size)
    pred, _ = predict(net, images)
    row = compute_metrics(ConfusionMatrix.from_predictions(labels, pred), args.name,
                          seed=args.seed, test_size=len(labels))
    report = MetricsReport(rows=[row], fingerprint=meta.get("fingerprint", ""), seeds=[args.seed])
    paths = emit_report(report, args.out, stem="evaluation")
    print(paths["markdown"].read_text(), end="")
    return EXIT_OK


def _cmd_experiment_matrix(args) -> int:
    cfg = _transfer_config(args)
    values = _config_values(args)
    seeds = args.seeds or _int_list(values.get("seeds", "")) or (args.seed,)
    train_frac = float(values.get("train_frac", 0.7))
    unknown = set(values) - set(TransferConfig.__dataclass_fields__) - {"seeds", "train_frac"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    plan = ExperimentPlan(seeds=tuple(seeds), transfer=replace(cfg, backbone=None), train_frac=train_frac)
    report = run_experiment_matrix(plan, args.real, args.synth, args.out, split_manifest=args.split,
                                   backbone=cfg.backbone, parallel=args.parallel)
    paths = emit_report(report, args.out)
    print(paths["markdown"].read_text(), end="")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed, include_msg_critic=not args.quick)
    print(format_results(results))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


def _cmd_audit_shapes(args) -> int:
    if not 1 <= args.depth <= 9:
        raise ConfigError("--depth must lie in 1..9")
    if args.execute and args.depth > 6:
        raise ConfigError("--execute is limited to depth <= 6")
    rows = audit_shapes(args.depth, execute=args.execute)
    for row in rows:
        print(row.format())
    failed = [r for r in rows if not r.ok]
    print(f"{len(rows) - len(failed)}/{len(rows)} shapes match")
    return EXIT_OK if not failed else EXIT_RUNTIME


COMMANDS = {
    "split": _cmd_split,
    "train-gan": _cmd_train_gan,
    "generate": _cmd_generate,
    "train-classifier": _cmd_train_classifier,
    "evaluate": _cmd_evaluate,
    "experiment-matrix": _cmd_experiment_matrix,
    "gradcheck": _cmd_gradcheck,
    "audit-shapes": _cmd_audit_shapes,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failure: divergence, I/O, ...
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


cli_main = main

if __name__ == "__main__":
    sys.exit(main())
