"""Command-line interface.

Verbs cover the full pipeline: gen-patterns, gram, measure, reconstruct,
build-dataset, train, denoise, evaluate, mismatch, ablate-augmentation and
report. Exit codes: 0 success, 2 plan/validation error, 3 runtime
numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import datapipe, forward, harness, patterns, recon
from .errors import (
    FormatError,
    PlanError,
    ResourceLimitError,
    TrainingDivergedError,
    UnsupportedSizeError,
)
from .neural import network as nn_net
from .neural import training as nn_train

EXIT_OK = 0
EXIT_PLAN = 2
EXIT_NUMERIC = 3

DESK_EPOCHS = int(2000 * harness.DESK_EPOCH_SCALE)
DESK_CHECKPOINTS = tuple(int(e * harness.DESK_EPOCH_SCALE)
                         for e in nn_train.CHECKPOINT_EPOCH_GRID)


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", type=str, default=None, help="output path or directory")
    parser.add_argument("--config", type=str, default=None, help="JSON plan/config file")
    parser.add_argument("--desk-scale", action="store_true",
                        help="use the small defaults sized for a laptop CPU")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _cmd_gen_patterns(args) -> int:
    if args.out is None:
        raise PlanError("gen-patterns requires --out")
    if args.kind in ("random-binary", "random-uniform"):
        dist = "binary" if args.kind == "random-binary" else "uniform"
        stack = patterns.gen_random_patterns(args.seed, args.m, args.width, args.height,
                                             distribution=dist)
    elif args.kind == "hadamard":
        stack = patterns.gen_hadamard_patterns(args.width, args.height, signed=args.signed)
    else:
        layout = patterns.EmitterLayout(
            emitter_count=args.emitters,
            disk_diameter_mm=args.disk_mm,
            pinhole_diameter_mm=args.pinhole_mm,
            wavelength_nm=args.wavelength_nm,
            propagation_distance_m=args.distance_m,
            detector_pitch_mm=args.pitch_mm,
        )
        stack = patterns.gen_interference_patterns(layout, args.seed, args.m,
                                                   args.width, args.height)
    patterns.save_stack(args.out, stack)
    print(f"wrote {stack.m_patterns} patterns ({stack.width}x{stack.height}, "
          f"{stack.kind}) to {args.out}")
    print(f"checksum {patterns.stack_checksum(stack)}")
    return EXIT_OK


def _cmd_gram(args) -> int:
    stack = patterns.load_stack(args.stack)
    diag = patterns.gram_diagnostics(stack, max_pixels=args.max_pixels)
    print(f"frobenius_deviation {diag.frobenius_deviation!r}")
    print(f"max_off_diagonal_coherence {diag.max_off_diagonal_coherence!r}")
    print(f"condition_number {diag.condition_number!r}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("frobenius_deviation,max_off_diagonal_coherence,condition_number\n")
            fh.write(f"{diag.frobenius_deviation!r},{diag.max_off_diagonal_coherence!r},"
                     f"{diag.condition_number!r}\n")
    return EXIT_OK


def _cmd_measure(args) -> int:
    if args.out is None:
        raise PlanError("measure requires --out")
    stack = patterns.load_stack(args.stack)
    image = datapipe.load_gray_image(args.image)
    buckets = forward.measure_noisy(stack, image, noise=args.noise,
                                    level=args.level, seed=args.seed)
    forward.save_buckets(args.out, buckets)
    if args.csv:
        forward.export_buckets_csv(args.csv, buckets)
    print(f"wrote {len(buckets)} bucket values to {args.out}")
    return EXIT_OK


def _cmd_reconstruct(args) -> int:
    if args.out is None:
        raise PlanError("reconstruct requires --out")
    stack = patterns.load_stack(args.stack)
    buckets = forward.load_buckets(args.buckets)
    if args.method in ("bc-plain", "bc-centered"):
        result = recon.bc_reconstruct(stack, buckets, mode=args.method.split("-")[1])
    else:
        result = recon.omp_reconstruct(stack, buckets, basis=args.basis,
                                       sparsity_k=args.sparsity_k,
                                       residual_tol=args.residual_tol)
    recon.save_reconstruction(args.out, result)
    if args.image_out:
        datapipe.save_gray_image(args.image_out, recon.normalize_for_display(result))
    print(f"wrote {result.method} reconstruction to {args.out}")
    return EXIT_OK


def _cmd_build_dataset(args) -> int:
    if args.out is None:
        raise PlanError("build-dataset requires --out")
    stack = patterns.load_stack(args.stack)
    manifest = datapipe.build_manifest(args.train_dir, "train",
                                       patch_size=args.patch or stack.width,
                                       stride=args.stride)
    dataset = datapipe.build_training_set(manifest, stack, recon_mode=args.recon_mode)
    datapipe.save_training_set(args.out, dataset)
    print(f"wrote {len(dataset.pairs)} pairs (sampling rate "
          f"{dataset.sampling_rate}) to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    if args.out is None:
        raise PlanError("train requires --out")
    depth = args.depth if args.depth else (harness.DESK_NET_DEPTH if args.desk_scale else 17)
    channels = args.channels if args.channels else (
        harness.DESK_NET_CHANNELS if args.desk_scale else 64)
    epochs = args.epochs if args.epochs else (DESK_EPOCHS if args.desk_scale else 2000)
    checkpoint_epochs = (_parse_int_list(args.checkpoint_epochs)
                         if args.checkpoint_epochs else
                         (DESK_CHECKPOINTS if args.desk_scale else
                          nn_train.CHECKPOINT_EPOCH_GRID))
    spec = nn_net.NetworkSpec(depth=depth, channels=channels)
    config = nn_train.TrainConfig(
        epochs=epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        augmentation=args.augmentation,
        shuffle_seed=args.seed,
        grad_clip=args.grad_clip,
        checkpoint_epochs=tuple(e for e in checkpoint_epochs if e <= epochs),
    )
    if args.gaussian_sigma is not None:
        if args.train_dir is None:
            raise PlanError("gaussian training requires --train-dir")
        manifest = datapipe.build_manifest(args.train_dir, "train",
                                           patch_size=args.patch, stride=args.stride)
        images = []
        for entry in manifest.entries:
            img = datapipe.load_gray_image(entry.path)
            images.extend(p.pixels for p in datapipe.extract_patches(
                img, size=args.patch, stride=args.stride))
        if not images:
            raise PlanError("no training patches found")
        result = nn_train.gaussian_denoiser_baseline(
            spec, images, args.gaussian_sigma, config,
            noise_seed=args.seed, init_seed=args.seed)
        provenance = {"task": "gaussian", "sigma": args.gaussian_sigma}
    else:
        if args.dataset is None:
            raise PlanError("train requires --dataset (or --gaussian-sigma with --train-dir)")
        dataset = datapipe.load_training_set(args.dataset)
        result = nn_train.train(spec, dataset.pairs, config, init_seed=args.seed)
        provenance = dataset.provenance()
    nn_net.save_checkpoint(args.out, result.params, provenance)
    stem = Path(args.out)
    for epoch, params in sorted(result.checkpoints.items()):
        nn_net.save_checkpoint(stem.with_name(f"{stem.stem}_epoch{epoch}{stem.suffix}"),
                               params, {**provenance, "epoch": epoch})
    if args.curve_csv:
        nn_train.export_loss_curve(args.curve_csv, result.loss_curve)
    print(f"trained {epochs} epochs; final mean loss {result.loss_curve[-1]!r}")
    print(f"wrote checkpoint to {args.out}")
    return EXIT_OK


def _cmd_denoise(args) -> int:
    if args.out is None:
        raise PlanError("denoise requires --out")
    params, _ = nn_net.load_checkpoint(args.model)
    if args.recon:
        noisy = recon.load_reconstruction(args.recon)
    else:
        if args.image is None:
            raise PlanError("denoise requires --image or --recon")
        noisy = datapipe.load_gray_image(args.image)
    cleaned = nn_net.denoise(params, noisy)
    datapipe.save_gray_image(args.out, cleaned)
    if args.girc:
        recon.save_reconstruction(args.girc, recon.Reconstruction(
            width=cleaned.width, height=cleaned.height,
            field=cleaned.pixels, method="nn-denoised"))
    print(f"wrote denoised image to {args.out}")
    return EXIT_OK


def _load_plan(args) -> harness.ExperimentPlan:
    if args.config is None:
        raise PlanError("this verb requires --config <plan.json>")
    plan = harness.ExperimentPlan.from_file(args.config)
    if args.out is not None:
        plan.output_dir = args.out
    if args.desk_scale and plan.max_test_images is None:
        plan.max_test_images = harness.DESK_MAX_TEST_IMAGES
    return plan


def _emit(plan: harness.ExperimentPlan, table: harness.ResultTable) -> None:
    out = Path(plan.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    harness.save_table(out / "results.json", table)
    written = harness.emit_report(table, out, formats=("csv", "plot-data"))
    for path in [out / "results.json", *written]:
        print(f"wrote {path}")


def _cmd_evaluate(args) -> int:
    plan = _load_plan(args)
    _emit(plan, harness.run_comparison(plan))
    return EXIT_OK


def _cmd_mismatch(args) -> int:
    plan = _load_plan(args)
    _emit(plan, harness.run_mismatch_experiment(plan))
    return EXIT_OK


def _cmd_ablate(args) -> int:
    plan = _load_plan(args)
    settings = tuple(args.settings.split(",")) if args.settings else (
        "none", "hflip", "rotation", "hflip+rotation")
    _emit(plan, harness.run_augmentation_ablation(plan, settings=settings))
    return EXIT_OK


def _cmd_report(args) -> int:
    if args.out is None:
        raise PlanError("report requires --out")
    table = harness.load_table(args.table)
    formats = tuple(args.format.split(","))
    for path in harness.emit_report(table, args.out, formats=formats):
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ghostkit",
        description="ghost-imaging simulation, reconstruction and denoising toolkit",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-patterns", help="synthesize an illumination pattern stack")
    _common_flags(p)
    p.add_argument("--kind", required=True, choices=patterns.PATTERN_KINDS)
    p.add_argument("--m", type=int, default=1024, help="number of patterns")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--signed", action="store_true", help="keep the signed Hadamard form")
    p.add_argument("--emitters", type=int, default=24)
    p.add_argument("--disk-mm", type=float, default=5.0)
    p.add_argument("--pinhole-mm", type=float, default=0.2)
    p.add_argument("--wavelength-nm", type=float, default=632.8)
    p.add_argument("--distance-m", type=float, default=1.0)
    p.add_argument("--pitch-mm", type=float, default=None)
    p.set_defaults(func=_cmd_gen_patterns)

    p = sub.add_parser("gram", help="linear-independence diagnostics of a stack")
    _common_flags(p)
    p.add_argument("--stack", required=True)
    p.add_argument("--max-pixels", type=int, default=patterns.DEFAULT_GRAM_PIXEL_CAP)
    p.set_defaults(func=_cmd_gram)

    p = sub.add_parser("measure", help="bucket-detect an image under a stack")
    _common_flags(p)
    p.add_argument("--stack", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--noise", choices=forward.NOISE_MODELS, default="none")
    p.add_argument("--level", type=float, default=0.0)
    p.add_argument("--csv", type=str, default=None)
    p.set_defaults(func=_cmd_measure)

    p = sub.add_parser("reconstruct", help="recover an image from buckets")
    _common_flags(p)
    p.add_argument("--stack", required=True)
    p.add_argument("--buckets", required=True)
    p.add_argument("--method", choices=("bc-plain", "bc-centered", "cs-omp"),
                   default="bc-plain")
    p.add_argument("--basis", choices=("dct2d", "identity"), default="dct2d")
    p.add_argument("--sparsity-k", type=int, default=None)
    p.add_argument("--residual-tol", type=float, default=None)
    p.add_argument("--image-out", type=str, default=None,
                   help="also save the display-normalised image")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("build-dataset", help="speckle-conditioned training pairs")
    _common_flags(p)
    p.add_argument("--train-dir", required=True)
    p.add_argument("--stack", required=True)
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--recon-mode", choices=("plain", "centered"), default="plain")
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("train", help="train the residual denoiser")
    _common_flags(p)
    p.add_argument("--dataset", type=str, default=None, help="GIDS training archive")
    p.add_argument("--train-dir", type=str, default=None,
                   help="clean images for the gaussian baseline")
    p.add_argument("--gaussian-sigma", type=float, default=None,
                   help="train the additive-gaussian baseline instead")
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=nn_train.OPTIMIZERS, default="adam")
    p.add_argument("--augmentation", choices=nn_train.AUGMENTATION_MODES, default="none")
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--checkpoint-epochs", type=str, default=None,
                   help="comma-separated epoch marks")
    p.add_argument("--curve-csv", type=str, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("denoise", help="apply a trained denoiser")
    _common_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--image", type=str, default=None)
    p.add_argument("--recon", type=str, default=None, help="GIRC reconstruction input")
    p.add_argument("--girc", type=str, default=None, help="also dump raw GIRC output")
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("evaluate", help="run the method-comparison protocol")
    _common_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("mismatch", help="matched vs mismatched speckle sequences")
    _common_flags(p)
    p.set_defaults(func=_cmd_mismatch)

    p = sub.add_parser("ablate-augmentation", help="flip/rotation augmentation ablation")
    _common_flags(p)
    p.add_argument("--settings", type=str, default=None,
                   help="comma-separated subset of none,hflip,rotation,hflip+rotation")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("report", help="re-emit a results table as CSV or plot data")
    _common_flags(p)
    p.add_argument("--table", required=True, help="results.json from a previous run")
    p.add_argument("--format", type=str, default="csv")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PlanError, FormatError, UnsupportedSizeError, ResourceLimitError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PLAN
    except (TrainingDivergedError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
