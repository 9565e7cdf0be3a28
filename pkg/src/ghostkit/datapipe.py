"""Image ingestion, patch extraction and training-set construction.

A training set is built by illuminating every clean patch with one fixed
pattern stack: the noisy member of each pair is the display-normalised
correlation reconstruction of that patch. The stack's identity (kind, seed,
checksum) is embedded in the set so matched-versus-mismatched speckle
experiments stay auditable.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import _binio
from .errors import CorruptionError, FormatError
from .forward import ImagePlane, measure
from .neural.network import TrainingPair
from .neural.training import random_augment
from .patterns import PatternStack, derived_rng, stack_checksum
from .recon import bc_reconstruct, normalize_for_display

DATASET_MAGIC = b"GIDS"
DATASET_FORMAT_VERSION = 1

IMAGE_SUFFIXES = (".pgm", ".png", ".bmp", ".tif", ".tiff")

_STREAM_SCENE = 8
_STREAM_AUGMENT_OP = 9

_PGM_HEADER = re.compile(rb"^P(?P<kind>[25])\s+(?:#.*\s+)*"
                         rb"(?P<w>\d+)\s+(?:#.*\s+)*(?P<h>\d+)\s+(?:#.*\s+)*"
                         rb"(?P<maxval>\d+)\s", re.DOTALL)


def _load_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    match = _PGM_HEADER.match(raw)
    if not match:
        raise FormatError(f"{path}: not a valid PGM header")
    width = int(match["w"])
    height = int(match["h"])
    maxval = int(match["maxval"])
    if not (0 < maxval < 65536):
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    body = raw[match.end():]
    if match["kind"] == b"2":
        values = np.array(body.split(), dtype=np.float64)
    else:
        dtype = ">u2" if maxval > 255 else "u1"
        count = width * height
        expected = count * np.dtype(dtype).itemsize
        if len(body) < expected:
            raise FormatError(f"{path}: PGM pixel data truncated")
        values = np.frombuffer(body[:expected], dtype=dtype).astype(np.float64)
    if values.size != width * height:
        raise FormatError(f"{path}: expected {width * height} pixels, got {values.size}")
    return (values / maxval).reshape(height, width)


def load_gray_image(path) -> ImagePlane:
    """Load an 8/16-bit single-channel raster, scaled to [0, 1].

    Portable graymaps are parsed directly; other lossless rasters go through
    Pillow. Multi-channel images are rejected rather than converted.
    """
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"image file not found: {path}")
    if path.suffix.lower() == ".pgm":
        return ImagePlane.from_array(_load_pgm(path))
    try:
        with Image.open(path) as img:
            if img.mode == "L":
                arr = np.asarray(img, dtype=np.float64) / 255.0
            elif img.mode in ("I;16", "I;16B", "I;16L"):
                arr = np.asarray(img, dtype=np.float64) / 65535.0
            else:
                raise FormatError(
                    f"{path}: expected single-channel grayscale, got mode {img.mode!r}"
                )
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: unreadable raster ({exc})") from exc
    return ImagePlane.from_array(arr)


def save_gray_image(path, image: ImagePlane) -> None:
    """Write an image as 8-bit PGM or (via Pillow) PNG/BMP/TIFF."""
    path = Path(path)
    quantised = np.clip(np.rint(image.pixels * 255.0), 0, 255).astype(np.uint8)
    if path.suffix.lower() == ".pgm":
        header = f"P5\n{image.width} {image.height}\n255\n".encode()
        path.write_bytes(header + quantised.tobytes())
    else:
        Image.fromarray(quantised, mode="L").save(path)


def extract_patches(image: ImagePlane, size: int = 64, stride: int | None = None) -> list[ImagePlane]:
    """Top-left-aligned grid patches; partial border patches are discarded."""
    if size < 1:
        raise ValueError("patch size must be at least 1")
    stride = size if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be at least 1")
    patches = []
    for top in range(0, image.height - size + 1, stride):
        for left in range(0, image.width - size + 1, stride):
            patches.append(ImagePlane.from_array(
                image.pixels[top:top + size, left:left + size]))
    return patches


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    width: int
    height: int
    checksum: str  # sha256 of the file bytes


@dataclass
class DatasetManifest:
    source_dir: str
    split: str  # "train" or "test"
    patch_size: int = 64
    stride: int | None = None
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.patch_size < 1:
            raise ValueError("patch_size must be at least 1")

    def checksums(self) -> set[str]:
        return {entry.checksum for entry in self.entries}

    def to_json(self) -> str:
        return json.dumps(
            {
                "source_dir": self.source_dir,
                "split": self.split,
                "patch_size": self.patch_size,
                "stride": self.stride,
                "entries": [asdict(e) for e in self.entries],
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        blob = json.loads(text)
        return cls(
            source_dir=blob["source_dir"],
            split=blob["split"],
            patch_size=blob["patch_size"],
            stride=blob.get("stride"),
            entries=[ManifestEntry(**e) for e in blob["entries"]],
        )


def build_manifest(directory, split: str, patch_size: int = 64,
                   stride: int | None = None) -> DatasetManifest:
    """Scan a directory of grayscale rasters (sorted by name) into a manifest."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"not a directory: {directory}")
    entries = []
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        image = load_gray_image(path)
        entries.append(ManifestEntry(
            path=str(path),
            width=image.width,
            height=image.height,
            checksum=hashlib.sha256(path.read_bytes()).hexdigest(),
        ))
    return DatasetManifest(source_dir=str(directory), split=split,
                           patch_size=patch_size, stride=stride, entries=entries)


def check_split_disjoint(train: DatasetManifest, test: DatasetManifest) -> None:
    overlap = train.checksums() & test.checksums()
    if overlap:
        raise ValueError(
            f"{len(overlap)} image(s) appear in both train and test splits"
        )


@dataclass
class TrainingSet:
    """Speckle-conditioned pairs plus the provenance needed to audit them."""

    pairs: list[TrainingPair]
    stack_kind: str
    stack_seed: int
    stack_checksum: str
    recon_mode: str
    sampling_rate: float
    patch_size: int
    manifest_source: str = ""

    def provenance(self) -> dict:
        return {
            "task": "speckle",
            "stack_kind": self.stack_kind,
            "stack_seed": self.stack_seed,
            "stack_checksum": self.stack_checksum,
            "recon_mode": self.recon_mode,
            "sampling_rate": self.sampling_rate,
            "patch_size": self.patch_size,
        }


def speckle_pair(stack: PatternStack, clean: ImagePlane, recon_mode: str = "plain") -> TrainingPair:
    """One training pair: display-normalised correlation image versus truth."""
    buckets = measure(stack, clean)
    noisy = normalize_for_display(bc_reconstruct(stack, buckets, mode=recon_mode))
    return TrainingPair(noisy=noisy.pixels, clean=clean.pixels)


def build_training_set(
    manifest: DatasetManifest, stack: PatternStack, recon_mode: str = "plain"
) -> TrainingSet:
    """Illuminate every clean patch of the manifest under one fixed stack.

    The same stack must be used later to illuminate unknown targets; its
    checksum is embedded so the pairing can be verified at training and
    evaluation time.
    """
    if recon_mode not in ("plain", "centered"):
        raise ValueError(f"unknown reconstruction mode {recon_mode!r}")
    size = manifest.patch_size
    if (stack.width, stack.height) != (size, size):
        raise ValueError(
            f"stack is {stack.width}x{stack.height} but the manifest patch size is {size}"
        )
    pairs = []
    for entry in manifest.entries:
        image = load_gray_image(entry.path)
        for patch in extract_patches(image, size=size, stride=manifest.stride):
            pairs.append(speckle_pair(stack, patch, recon_mode=recon_mode))
    return TrainingSet(
        pairs=pairs,
        stack_kind=stack.kind,
        stack_seed=stack.seed,
        stack_checksum=stack_checksum(stack),
        recon_mode=recon_mode,
        sampling_rate=stack.sampling_rate,
        patch_size=size,
        manifest_source=manifest.source_dir,
    )


def augment(pair: TrainingPair, ops: str = "none", seed: int = 0) -> TrainingPair:
    """Random flip/rotation applied jointly to both pair members.

    ``ops`` is one of "none", "hflip", "rotation", "hflip+rotation";
    rotations are multiples of 90 degrees so no resampling is introduced.
    """
    return random_augment(pair, ops, derived_rng(seed, _STREAM_AUGMENT_OP))


def save_training_set(path, dataset: TrainingSet) -> None:
    """GIDS archive: manifest block, then float32 pair tensors, checksummed."""
    payload = bytearray()
    for pair in dataset.pairs:
        payload += pair.noisy.astype("<f4").tobytes()
        payload += pair.clean.astype("<f4").tobytes()
    manifest_blob = {
        "stack_kind": dataset.stack_kind,
        "stack_seed": dataset.stack_seed,
        "stack_checksum": dataset.stack_checksum,
        "recon_mode": dataset.recon_mode,
        "sampling_rate": dataset.sampling_rate,
        "patch_size": dataset.patch_size,
        "manifest_source": dataset.manifest_source,
        "pair_count": len(dataset.pairs),
        "pair_shapes": [list(p.noisy.shape) for p in dataset.pairs],
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    with open(path, "wb") as fh:
        _binio.write_magic(fh, DATASET_MAGIC, DATASET_FORMAT_VERSION)
        _binio.write_bytes_block(fh, json.dumps(manifest_blob, sort_keys=True).encode())
        fh.write(bytes(payload))


def load_training_set(path) -> TrainingSet:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot open training set {path}: {exc}") from exc
    with fh:
        version = _binio.read_magic(fh, DATASET_MAGIC)
        if version != DATASET_FORMAT_VERSION:
            raise FormatError(f"unsupported GIDS version {version}")
        blob = json.loads(_binio.read_bytes_block(fh).decode())
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != blob["payload_sha256"]:
        raise CorruptionError("training-set payload failed its checksum")
    pairs = []
    offset = 0
    for shape in blob["pair_shapes"]:
        h, w = shape
        nbytes = h * w * 4
        noisy = np.frombuffer(payload[offset:offset + nbytes], dtype="<f4").reshape(h, w)
        offset += nbytes
        clean = np.frombuffer(payload[offset:offset + nbytes], dtype="<f4").reshape(h, w)
        offset += nbytes
        pairs.append(TrainingPair(noisy=noisy, clean=clean))
    if len(pairs) != blob["pair_count"]:
        raise CorruptionError("training-set pair count inconsistent")
    return TrainingSet(
        pairs=pairs,
        stack_kind=blob["stack_kind"],
        stack_seed=blob["stack_seed"],
        stack_checksum=blob["stack_checksum"],
        recon_mode=blob["recon_mode"],
        sampling_rate=blob["sampling_rate"],
        patch_size=blob["patch_size"],
        manifest_source=blob.get("manifest_source", ""),
    )


def synthetic_scene(seed: int, width: int = 64, height: int = 64) -> ImagePlane:
    """Deterministic grayscale scene for desk-scale experiments.

    Occlusion ("dead leaves") model: opaque rectangles and disks layered
    over a flat base, plus a gentle gradient and one soft blob. Edges keep
    the spectrum dense, the way natural photographs are, instead of the
    low-pass content a transform-sparse solver would find trivially easy.
    No external image corpus is bundled; experiments ingest any
    user-supplied grayscale directory or these scenes.
    """
    rng = derived_rng(seed, _STREAM_SCENE)
    ys, xs = np.mgrid[0:height, 0:width]
    size = min(width, height)
    img = np.full((height, width), rng.uniform(0.2, 0.8))
    for _ in range(int(rng.integers(10, 17))):
        value = rng.uniform(0.0, 1.0)
        if rng.integers(0, 2) == 0:
            x0 = int(rng.integers(0, width))
            y0 = int(rng.integers(0, height))
            w0 = int(rng.integers(size // 8, size // 2 + 1))
            h0 = int(rng.integers(size // 8, size // 2 + 1))
            img[y0:y0 + h0, x0:x0 + w0] = value
        else:
            cx, cy = rng.uniform(0, width), rng.uniform(0, height)
            radius = rng.uniform(size / 10, size / 4)
            img[(xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2] = value
    gx, gy = rng.uniform(-1, 1, 2)
    img = img + 0.15 * (gx * xs / width + gy * ys / height)
    cx, cy = rng.uniform(0, width), rng.uniform(0, height)
    sigma = rng.uniform(0.1, 0.25) * size
    img = img + rng.uniform(-0.2, 0.2) * np.exp(
        -((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2))

    lo, hi = img.min(), img.max()
    if hi == lo:
        return ImagePlane.from_array(np.full((height, width), 0.5))
    return ImagePlane.from_array((img - lo) / (hi - lo))
