"""Experiment runner: method comparisons, speckle-mismatch and augmentation
ablations, with CSV / plot-data emission.

Every run is a pure function of its plan and seeds; output rows carry the
pattern-stack checksum and seed needed to regenerate them. Evaluation never
trains implicitly and fails fast on missing checkpoints; the augmentation
ablation is the one verb whose contract *is* training.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .datapipe import build_manifest, build_training_set, load_gray_image
from .errors import PlanError
from .forward import ImagePlane, measure
from .metrics import psnr, ssim
from .neural.network import NetworkParams, NetworkSpec, denoise, load_checkpoint
from .neural.training import TrainConfig, train
from .patterns import PatternStack, load_stack, stack_checksum, take_patterns
from .recon import bc_reconstruct, normalize_for_display, omp_reconstruct

COMPARISON_METHODS = ("bc", "cs-omp", "nn-speckle", "nn-gaussian")

# desk-scale protocol defaults: small enough that the full comparison,
# mismatch and ablation suite stays in the minutes range on a laptop CPU
DESK_PATCH_SIZE = 32
DESK_NET_DEPTH = 7
DESK_NET_CHANNELS = 32
DESK_EPOCH_SCALE = 0.05
DESK_MAX_TEST_IMAGES = 10


@dataclass
class ExperimentPlan:
    """Everything a run needs; serialisable to/from a JSON config file."""

    test_dir: str
    stack_path: str
    methods: list[str] = field(default_factory=lambda: ["bc", "cs-omp"])
    sampling_rates: list[float] = field(default_factory=lambda: [0.5, 1.0])
    checkpoints: dict[str, str] = field(default_factory=dict)
    mismatch_stack_path: str | None = None
    output_dir: str = "."
    seed: int = 0
    bc_mode: str = "plain"
    omp_sparsity_k: int | None = None
    omp_residual_tol: float | None = None
    max_test_images: int | None = None
    # ablation-only fields
    train_dir: str | None = None
    net_depth: int = DESK_NET_DEPTH
    net_channels: int = DESK_NET_CHANNELS
    epochs: int = 25
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentPlan":
        blob = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(blob) - known
        if extra:
            raise PlanError(f"unknown plan fields: {sorted(extra)}")
        if "test_dir" not in blob or "stack_path" not in blob:
            raise PlanError("plan must set test_dir and stack_path")
        return cls(**blob)

    @classmethod
    def from_file(cls, path) -> "ExperimentPlan":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise PlanError(f"cannot read plan config {path}: {exc}") from exc
        return cls.from_json(text)


@dataclass
class ResultRow:
    image: str
    method: str
    rate: float
    psnr_db: float
    ssim: float
    seed: int
    stack_checksum: str
    epoch: int | None = None


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def mean_psnr(self, method: str, rate: float | None = None) -> float:
        vals = [r.psnr_db for r in self.rows
                if r.method == method and r.image != "AVERAGE"
                and (rate is None or r.rate == rate)]
        if not vals:
            raise ValueError(f"no rows for method {method!r}")
        return float(np.mean(vals))

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows], "notes": self.notes},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ResultTable":
        blob = json.loads(text)
        return cls(rows=[ResultRow(**r) for r in blob["rows"]], notes=blob["notes"])


def save_table(path, table: ResultTable) -> None:
    Path(path).write_text(table.to_json())


def load_table(path) -> ResultTable:
    return ResultTable.from_json(Path(path).read_text())


def _load_test_images(plan: ExperimentPlan, stack: PatternStack) -> list[tuple[str, ImagePlane]]:
    directory = Path(plan.test_dir)
    if not directory.is_dir():
        raise PlanError(f"test directory does not exist: {directory}")
    manifest = build_manifest(directory, "test", patch_size=stack.width)
    if not manifest.entries:
        raise PlanError(f"no test images found in {directory}")
    entries = manifest.entries
    if plan.max_test_images is not None:
        entries = entries[: plan.max_test_images]
    images = []
    for entry in entries:
        img = load_gray_image(entry.path)
        if (img.width, img.height) != (stack.width, stack.height):
            raise PlanError(
                f"test image {entry.path} is {img.width}x{img.height}; "
                f"stack expects {stack.width}x{stack.height}"
            )
        images.append((Path(entry.path).name, img))
    return images


def _load_method_checkpoints(plan: ExperimentPlan) -> dict[str, tuple[NetworkParams, dict]]:
    loaded = {}
    for method in plan.methods:
        if not method.startswith("nn-"):
            continue
        path = plan.checkpoints.get(method)
        if path is None:
            raise PlanError(f"method {method!r} requires a checkpoint path")
        if not Path(path).is_file():
            raise PlanError(f"checkpoint for {method!r} not found: {path}")
        loaded[method] = load_checkpoint(path)
    return loaded


def _validate_methods(methods: list[str]) -> None:
    if not methods:
        raise PlanError("plan lists no methods")
    unknown = [m for m in methods if m not in COMPARISON_METHODS]
    if unknown:
        raise PlanError(f"unknown methods: {unknown}")


def run_comparison(plan: ExperimentPlan) -> ResultTable:
    """Per image x method x sampling rate PSNR/SSIM rows plus method averages.

    The noisy input of the neural methods is the display-normalised
    correlation image, exactly as in training-set construction. A
    checkpoint whose embedded stack checksum differs from the evaluated
    sub-stack is noted in the table, never silently ignored.
    """
    _validate_methods(plan.methods)
    stack = load_stack(plan.stack_path)
    nets = _load_method_checkpoints(plan)
    images = _load_test_images(plan, stack)
    table = ResultTable()
    for rate in plan.sampling_rates:
        m = int(round(rate * stack.n_pixels))
        if not (1 <= m <= stack.m_patterns):
            raise PlanError(
                f"sampling rate {rate} needs {m} patterns; stack holds {stack.m_patterns}"
            )
        sub = take_patterns(stack, m)
        sub_checksum = stack_checksum(sub)
        for method, (params, provenance) in nets.items():
            trained_on = provenance.get("stack_checksum")
            if method == "nn-speckle" and trained_on and trained_on != sub_checksum:
                table.notes.append(
                    f"rate {rate}: checkpoint for {method} was trained on stack "
                    f"{trained_on[:12]}..., evaluating on {sub_checksum[:12]}..."
                )
        for name, img in images:
            buckets = measure(sub, img)
            bc_norm = normalize_for_display(bc_reconstruct(sub, buckets, mode=plan.bc_mode))
            for method in plan.methods:
                if method == "bc":
                    output = bc_norm
                elif method == "cs-omp":
                    output = normalize_for_display(omp_reconstruct(
                        sub, buckets,
                        sparsity_k=plan.omp_sparsity_k,
                        residual_tol=plan.omp_residual_tol,
                    ))
                else:
                    output = denoise(nets[method][0], bc_norm)
                table.rows.append(ResultRow(
                    image=name, method=method, rate=rate,
                    psnr_db=psnr(img, output), ssim=ssim(img, output),
                    seed=plan.seed, stack_checksum=sub_checksum,
                ))
        for method in plan.methods:
            rows = [r for r in table.rows if r.method == method and r.rate == rate
                    and r.image != "AVERAGE"]
            table.rows.append(ResultRow(
                image="AVERAGE", method=method, rate=rate,
                psnr_db=float(np.mean([r.psnr_db for r in rows])),
                ssim=float(np.mean([r.ssim for r in rows])),
                seed=plan.seed, stack_checksum=sub_checksum,
            ))
    return table


def run_mismatch_experiment(plan: ExperimentPlan) -> ResultTable:
    """Evaluate a speckle-trained denoiser under its own versus a foreign stack.

    Requires ``mismatch_stack_path`` and an ``nn-speckle`` checkpoint. Rows
    come in matched/mismatched pairs per image; the mean PSNR gap is noted.
    """
    if plan.mismatch_stack_path is None:
        raise PlanError("mismatch experiment needs mismatch_stack_path")
    if "nn-speckle" not in plan.checkpoints:
        raise PlanError("mismatch experiment needs an nn-speckle checkpoint")
    ckpt_path = plan.checkpoints["nn-speckle"]
    if not Path(ckpt_path).is_file():
        raise PlanError(f"checkpoint not found: {ckpt_path}")
    stack_a = load_stack(plan.stack_path)
    stack_b = load_stack(plan.mismatch_stack_path)
    sum_a, sum_b = stack_checksum(stack_a), stack_checksum(stack_b)
    if sum_a == sum_b:
        raise PlanError("mismatch experiment requires two different stacks")
    if (stack_a.width, stack_a.height, stack_a.m_patterns) != (
            stack_b.width, stack_b.height, stack_b.m_patterns):
        raise PlanError("matched and mismatched stacks must share kind and size")
    params, provenance = load_checkpoint(ckpt_path)
    trained_on = provenance.get("stack_checksum")
    if trained_on and trained_on != sum_a:
        raise PlanError("checkpoint was not trained on the plan's primary stack")
    images = _load_test_images(plan, stack_a)
    mode = provenance.get("recon_mode", plan.bc_mode)

    table = ResultTable()
    gaps = []
    for name, img in images:
        scores = {}
        for label, stack, checksum in (("nn-matched", stack_a, sum_a),
                                       ("nn-mismatched", stack_b, sum_b)):
            bc_norm = normalize_for_display(
                bc_reconstruct(stack, measure(stack, img), mode=mode))
            output = denoise(params, bc_norm)
            scores[label] = psnr(img, output)
            table.rows.append(ResultRow(
                image=name, method=label, rate=stack.sampling_rate,
                psnr_db=scores[label], ssim=ssim(img, output),
                seed=plan.seed, stack_checksum=checksum,
            ))
        gaps.append(scores["nn-matched"] - scores["nn-mismatched"])
    for label, checksum, stack in (("nn-matched", sum_a, stack_a),
                                   ("nn-mismatched", sum_b, stack_b)):
        rows = [r for r in table.rows if r.method == label and r.image != "AVERAGE"]
        table.rows.append(ResultRow(
            image="AVERAGE", method=label, rate=stack.sampling_rate,
            psnr_db=float(np.mean([r.psnr_db for r in rows])),
            ssim=float(np.mean([r.ssim for r in rows])),
            seed=plan.seed, stack_checksum=checksum,
        ))
    table.notes.append(f"mean matched-minus-mismatched PSNR gap: {float(np.mean(gaps)):.4f} dB")
    return table


def run_augmentation_ablation(
    plan: ExperimentPlan,
    settings: tuple[str, ...] = ("none", "hflip", "rotation", "hflip+rotation"),
) -> ResultTable:
    """Train once per augmentation setting (identical seeds) and score each
    on the held-out images; the speckle-conditioned protocol's ablation."""
    if plan.train_dir is None:
        raise PlanError("augmentation ablation needs train_dir")
    if not settings:
        raise PlanError("no augmentation settings given")
    stack = load_stack(plan.stack_path)
    train_manifest = build_manifest(plan.train_dir, "train", patch_size=stack.width)
    if not train_manifest.entries:
        raise PlanError(f"no training images found in {plan.train_dir}")
    dataset = build_training_set(train_manifest, stack, recon_mode=plan.bc_mode)
    images = _load_test_images(plan, stack)
    checksum = stack_checksum(stack)
    spec = NetworkSpec(depth=plan.net_depth, channels=plan.net_channels)

    table = ResultTable()
    for setting in settings:
        config = TrainConfig(
            epochs=plan.epochs,
            batch_size=plan.batch_size,
            learning_rate=plan.learning_rate,
            optimizer=plan.optimizer,
            augmentation=setting,
            shuffle_seed=plan.seed,
        )
        result = train(spec, dataset.pairs, config, init_seed=plan.seed)
        label = f"aug-{setting}"
        for name, img in images:
            bc_norm = normalize_for_display(
                bc_reconstruct(stack, measure(stack, img), mode=plan.bc_mode))
            output = denoise(result.params, bc_norm)
            table.rows.append(ResultRow(
                image=name, method=label, rate=stack.sampling_rate,
                psnr_db=psnr(img, output), ssim=ssim(img, output),
                seed=plan.seed, stack_checksum=checksum,
            ))
        rows = [r for r in table.rows if r.method == label and r.image != "AVERAGE"]
        table.rows.append(ResultRow(
            image="AVERAGE", method=label, rate=stack.sampling_rate,
            psnr_db=float(np.mean([r.psnr_db for r in rows])),
            ssim=float(np.mean([r.ssim for r in rows])),
            seed=plan.seed, stack_checksum=checksum,
        ))
    return table


def _sort_key(row: ResultRow):
    return (row.rate, row.method, row.image == "AVERAGE", row.image)


def emit_report(table: ResultTable, output_dir, formats: tuple[str, ...] = ("csv",)) -> list[Path]:
    """Write the table as CSV and/or plot-ready (x, y, series) triples.

    Rows are sorted by a fixed key first, so re-running an identical plan
    produces byte-identical files. Plot data uses the checkpoint epoch as x
    when present, the sampling rate otherwise; one series per method.
    """
    if not table.rows:
        raise ValueError("cannot emit an empty table")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    rows = sorted(table.rows, key=_sort_key)
    for fmt in formats:
        if fmt == "csv":
            path = out / "report.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["image", "method", "rate", "psnr_db", "ssim",
                                 "seed", "stack_checksum"])
                for r in rows:
                    writer.writerow([r.image, r.method, repr(r.rate), repr(r.psnr_db),
                                     repr(r.ssim), r.seed, r.stack_checksum])
        elif fmt == "plot-data":
            path = out / "plot_data.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["x", "y", "series"])
                for r in rows:
                    if r.image != "AVERAGE":
                        continue
                    x = r.epoch if r.epoch is not None else r.rate
                    writer.writerow([repr(float(x)), repr(r.psnr_db), r.method])
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written.append(path)
    if table.notes:
        notes_path = out / "notes.txt"
        notes_path.write_text("".join(f"{note}\n" for note in table.notes))
        written.append(notes_path)
    return written
