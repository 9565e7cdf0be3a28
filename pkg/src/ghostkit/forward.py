"""Bucket-detector measurement: project an object onto a pattern stack.

The bucket value for pattern j is the plain inner product
``b_j = sum_r P_j(r) * O(r)``. Accumulation runs in double precision with a
fixed left-to-right pixel order, so results are bit-reproducible and match a
naive per-pixel loop exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _binio
from .errors import CorruptionError, FormatError
from .patterns import PatternsLike, PatternStack, derived_rng, pattern_matrix

BUCKET_MAGIC = b"GIBK"
BUCKET_FORMAT_VERSION = 1

NOISE_MODELS = ("none", "gaussian", "poisson")

_STREAM_DETECTOR = 3


@dataclass(frozen=True)
class ImagePlane:
    """Grayscale object or image: (height, width) float64 pixels in [0, 1]."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if px.shape != (self.height, self.width):
            raise ValueError(
                f"pixels must have shape ({self.height}, {self.width}), got {px.shape}"
            )
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite pixels")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("image pixels must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImagePlane":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"image array must be 2-D, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr)

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)


@dataclass(frozen=True)
class BucketSeries:
    """Length-M vector of bucket detections for one pattern stack."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError(f"bucket values must be a non-empty vector, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("bucket values contain non-finite entries")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size


def _object_vector(patterns: PatternsLike, obj: ImagePlane | np.ndarray) -> np.ndarray:
    if isinstance(obj, ImagePlane):
        if isinstance(patterns, PatternStack):
            if (obj.width, obj.height) != (patterns.width, patterns.height):
                raise ValueError(
                    f"object is {obj.width}x{obj.height} but patterns are "
                    f"{patterns.width}x{patterns.height}"
                )
        return obj.flat()
    arr = np.asarray(obj, dtype=np.float64).reshape(-1)
    return arr


def ordered_accumulate_columns(mat: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """mat @ vec with strict left-to-right accumulation along columns.

    Equivalent, bit for bit, to the scalar loop
    ``out[j] = ((0 + mat[j,0]*vec[0]) + mat[j,1]*vec[1]) + ...``.
    """
    out = np.zeros(mat.shape[0], dtype=np.float64)
    for r in range(mat.shape[1]):
        out += mat[:, r] * vec[r]
    return out


def ordered_accumulate_rows(mat: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """mat^T @ weights with strict top-to-bottom accumulation along rows."""
    out = np.zeros(mat.shape[1], dtype=np.float64)
    for j in range(mat.shape[0]):
        out += mat[j, :] * weights[j]
    return out


def measure(patterns: PatternsLike, obj: ImagePlane | np.ndarray) -> BucketSeries:
    """Noiseless bucket detection of ``obj`` under every pattern."""
    o = _object_vector(patterns, obj)
    p = pattern_matrix(patterns, n_pixels=o.size)
    # Fortran order makes the per-column slices contiguous
    return BucketSeries(ordered_accumulate_columns(np.asfortranarray(p), o))


def measure_noisy(
    patterns: PatternsLike,
    obj: ImagePlane | np.ndarray,
    noise: str = "none",
    level: float = 0.0,
    seed: int = 0,
) -> BucketSeries:
    """Bucket detection with an optional detector-noise model.

    "gaussian" adds N(0, level^2) per bucket; "poisson" draws photon counts
    with mean ``value * level`` and rescales by 1/level (``level`` is then
    the photon count per unit bucket value). "none" is bit-identical to
    :func:`measure`. Deterministic for a fixed seed.
    """
    clean = measure(patterns, obj)
    if noise not in NOISE_MODELS:
        raise ValueError(f"unknown noise model {noise!r}")
    if noise == "none":
        return clean
    if noise == "gaussian":
        if level < 0:
            raise ValueError("gaussian noise level must be non-negative")
        rng = derived_rng(seed, _STREAM_DETECTOR)
        return BucketSeries(clean.values + level * rng.standard_normal(len(clean)))
    if level <= 0:
        raise ValueError("poisson scale must be strictly positive")
    if clean.values.min() < 0:
        raise ValueError("poisson noise requires non-negative bucket values")
    rng = derived_rng(seed, _STREAM_DETECTOR)
    return BucketSeries(rng.poisson(clean.values * level).astype(np.float64) / level)


def save_buckets(path, buckets: BucketSeries) -> None:
    """Write a bucket series in the GIBK binary format."""
    with open(path, "wb") as fh:
        _binio.write_magic(fh, BUCKET_MAGIC, BUCKET_FORMAT_VERSION)
        _binio.write_u32(fh, len(buckets))
        fh.write(buckets.values.astype("<f8").tobytes())


def load_buckets(path) -> BucketSeries:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot open bucket series {path}: {exc}") from exc
    with fh:
        version = _binio.read_magic(fh, BUCKET_MAGIC)
        if version != BUCKET_FORMAT_VERSION:
            raise FormatError(f"unsupported GIBK version {version}")
        m = _binio.read_u32(fh)
        raw = fh.read(m * 8)
        if len(raw) != m * 8:
            raise CorruptionError("bucket series payload truncated")
        values = np.frombuffer(raw, dtype="<f8").copy()
    return BucketSeries(values)


def export_buckets_csv(path, buckets: BucketSeries) -> None:
    """(index, value) CSV export for inspection."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "value"])
        for i, v in enumerate(buckets.values):
            writer.writerow([i, repr(float(v))])
