"""Object reconstruction from patterns and bucket detections.

Three routes are provided: the correlation estimate ``G = P^T B`` (plain, or
the mean-centered fluctuation variant), its exact split into object plus
structured residue ``G = O + (P^T P - I) O``, and a greedy orthogonal
matching pursuit baseline over an orthonormal 2-D DCT dictionary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dctn, idctn

from . import _binio
from .errors import CorruptionError, FormatError
from .forward import BucketSeries, ImagePlane, ordered_accumulate_rows
from .patterns import PatternsLike, PatternStack, pattern_matrix

RECON_METHODS = ("bc-plain", "bc-centered", "cs-omp", "nn-denoised")

RECON_MAGIC = b"GIRC"
RECON_FORMAT_VERSION = 1


class RankDeficientAtomWarning(UserWarning):
    """An OMP atom made the active set rank deficient and was dropped."""


@dataclass(frozen=True)
class Reconstruction:
    """Recovered field (unbounded range) plus the method that produced it."""

    width: int
    height: int
    field: np.ndarray
    method: str

    def __post_init__(self):
        if self.method not in RECON_METHODS:
            raise ValueError(f"unknown reconstruction method {self.method!r}")
        f = np.ascontiguousarray(self.field, dtype=np.float64)
        if f.shape != (self.height, self.width):
            raise ValueError(
                f"field must have shape ({self.height}, {self.width}), got {f.shape}"
            )
        if not np.all(np.isfinite(f)):
            raise ValueError("reconstruction field contains non-finite values")
        object.__setattr__(self, "field", f)


@dataclass(frozen=True)
class ResidualField:
    """The structured artifact term ``(P^T P - I) O`` of a correlation image."""

    width: int
    height: int
    field: np.ndarray

    def __post_init__(self):
        f = np.ascontiguousarray(self.field, dtype=np.float64)
        if f.shape != (self.height, self.width):
            raise ValueError(
                f"field must have shape ({self.height}, {self.width}), got {f.shape}"
            )
        object.__setattr__(self, "field", f)


@dataclass
class OMPInfo:
    """Per-run greedy-solver diagnostics."""

    support: list[int] = field(default_factory=list)
    coefficients: np.ndarray | None = None
    residual_norms: list[float] = field(default_factory=list)
    dropped_atoms: list[int] = field(default_factory=list)


def _shape_of(patterns: PatternsLike, n_pixels: int) -> tuple[int, int]:
    if isinstance(patterns, PatternStack):
        return patterns.width, patterns.height
    side = int(round(n_pixels**0.5))
    if side * side != n_pixels:
        raise ValueError(
            "raw pattern matrices must describe square images; pass a PatternStack "
            f"for {n_pixels} pixels"
        )
    return side, side


def _bucket_vector(buckets: BucketSeries | np.ndarray) -> np.ndarray:
    if isinstance(buckets, BucketSeries):
        return buckets.values
    return np.asarray(buckets, dtype=np.float64).reshape(-1)


def bc_reconstruct(
    patterns: PatternsLike,
    buckets: BucketSeries | np.ndarray,
    mode: str = "plain",
) -> Reconstruction:
    """Correlation reconstruction ``G = P^T B``.

    "plain" applies the equation verbatim; "centered" correlates the
    fluctuations, ``(P - mean_P)^T (B - mean_B) / M``, which is invariant to
    constant bucket offsets. Accumulation order over patterns is fixed
    (top to bottom), matching a naive double loop bit for bit.
    """
    if mode not in ("plain", "centered"):
        raise ValueError(f"unknown correlation mode {mode!r}")
    b = _bucket_vector(buckets)
    p = pattern_matrix(patterns)
    if p.shape[0] != b.size:
        raise ValueError(f"stack has {p.shape[0]} patterns but {b.size} bucket values")
    width, height = _shape_of(patterns, p.shape[1])
    if mode == "plain":
        g = ordered_accumulate_rows(p, b)
    else:
        p_centered = p - p.mean(axis=0)
        b_centered = b - b.mean()
        g = ordered_accumulate_rows(p_centered, b_centered) / b.size
    return Reconstruction(width=width, height=height,
                          field=g.reshape(height, width),
                          method=f"bc-{mode}")


def residual_decompose(
    patterns: PatternsLike, obj: ImagePlane | np.ndarray
) -> tuple[Reconstruction, ResidualField]:
    """Split the correlation image into object plus residue.

    Returns ``G = (P^T P) O`` and ``R = (P^T P - I) O``; both come from the
    same Gram product so ``G = O + R`` holds identically. ``R`` is the
    noise-structure label a speckle-conditioned denoiser learns to remove.
    """
    if isinstance(obj, ImagePlane):
        o = obj.flat()
        if isinstance(patterns, PatternStack) and (
            (obj.width, obj.height) != (patterns.width, patterns.height)
        ):
            raise ValueError(
                f"object is {obj.width}x{obj.height} but patterns are "
                f"{patterns.width}x{patterns.height}"
            )
    else:
        o = np.asarray(obj, dtype=np.float64).reshape(-1)
    p = pattern_matrix(patterns, n_pixels=o.size)
    width, height = _shape_of(patterns, o.size)
    gram = p.T @ p
    g = gram @ o
    r = g - o
    return (
        Reconstruction(width=width, height=height, field=g.reshape(height, width),
                       method="bc-plain"),
        ResidualField(width=width, height=height, field=r.reshape(height, width)),
    )


def _dct_synthesize(coeffs: np.ndarray, height: int, width: int) -> np.ndarray:
    return idctn(coeffs.reshape(height, width), type=2, norm="ortho").reshape(-1)


def _dct_analyze(vec: np.ndarray, height: int, width: int) -> np.ndarray:
    return dctn(vec.reshape(height, width), type=2, norm="ortho").reshape(-1)


def omp_reconstruct(
    patterns: PatternsLike,
    buckets: BucketSeries | np.ndarray,
    basis: str = "dct2d",
    sparsity_k: int | None = None,
    residual_tol: float | None = None,
    return_info: bool = False,
):
    """Greedy sparse recovery of the object from ``B ~ P Psi theta``.

    Per iteration: pick the dictionary column (A = P Psi) most correlated
    with the residual, re-solve least squares on the active set, and stop
    after ``sparsity_k`` atoms or once the residual 2-norm drops to
    ``residual_tol``. Defaults: k = floor(0.1 N) and tol = 1e-6 ||B||.
    Psi is the orthonormal inverse 2-D DCT ("dct2d") or the identity.

    Atoms that make the active set rank deficient are dropped with a
    :class:`RankDeficientAtomWarning` rather than failing the run. With
    ``return_info=True`` also returns an :class:`OMPInfo` holding the
    support, coefficients and per-iteration residual norms.
    """
    if basis not in ("dct2d", "identity"):
        raise ValueError(f"unknown sparsifying basis {basis!r}")
    b = _bucket_vector(buckets)
    p = pattern_matrix(patterns)
    m, n = p.shape
    if m != b.size:
        raise ValueError(f"stack has {m} patterns but {b.size} bucket values")
    width, height = _shape_of(patterns, n)
    if sparsity_k is None:
        sparsity_k = max(1, n // 10)
    if not (1 <= sparsity_k <= m):
        raise ValueError(f"sparsity_k must be in [1, {m}], got {sparsity_k}")
    if residual_tol is None:
        residual_tol = 1e-6 * float(np.linalg.norm(b))
    if residual_tol < 0:
        raise ValueError("residual_tol must be non-negative")

    if basis == "dct2d":
        def atom_column(i: int) -> np.ndarray:
            e = np.zeros(n)
            e[i] = 1.0
            return p @ _dct_synthesize(e, height, width)

        def correlate(residual: np.ndarray) -> np.ndarray:
            return _dct_analyze(p.T @ residual, height, width)
    else:
        def atom_column(i: int) -> np.ndarray:
            return p[:, i].copy()

        def correlate(residual: np.ndarray) -> np.ndarray:
            return p.T @ residual

    info = OMPInfo()
    residual = b.copy()
    info.residual_norms.append(float(np.linalg.norm(residual)))
    columns: list[np.ndarray] = []
    excluded: set[int] = set()
    theta_active = np.zeros(0)
    # dropped atoms do not count toward the sparsity budget; cap total tries
    for _ in range(min(m, sparsity_k + n)):
        if len(info.support) >= sparsity_k:
            break
        if info.residual_norms[-1] <= residual_tol:
            break
        corr = correlate(residual)
        if excluded:
            corr[list(excluded)] = 0.0
        atom = int(np.argmax(np.abs(corr)))
        if corr[atom] == 0.0:
            break  # residual orthogonal to every remaining atom
        candidate_cols = columns + [atom_column(atom)]
        a_active = np.column_stack(candidate_cols)
        theta, _, rank, _ = np.linalg.lstsq(a_active, b, rcond=None)
        if rank < a_active.shape[1]:
            warnings.warn(
                f"dropping atom {atom}: active set would become rank deficient",
                RankDeficientAtomWarning,
                stacklevel=2,
            )
            info.dropped_atoms.append(atom)
            excluded.add(atom)
            continue
        columns = candidate_cols
        info.support.append(atom)
        excluded.add(atom)
        theta_active = theta
        residual = b - a_active @ theta_active
        info.residual_norms.append(float(np.linalg.norm(residual)))

    coeffs = np.zeros(n)
    if info.support:
        coeffs[info.support] = theta_active
    info.coefficients = coeffs
    if basis == "dct2d":
        flat = _dct_synthesize(coeffs, height, width)
    else:
        flat = coeffs
    recon = Reconstruction(width=width, height=height,
                           field=flat.reshape(height, width), method="cs-omp")
    if return_info:
        return recon, info
    return recon


def normalize_for_display(recon: Reconstruction | np.ndarray) -> ImagePlane:
    """Affine min-max map of a field to [0, 1]; constant fields map to 0.5.

    This is the single documented scaling convention: metrics and the
    denoising network always consume its output.
    """
    if isinstance(recon, Reconstruction):
        f = recon.field
    else:
        f = np.asarray(recon, dtype=np.float64)
        if f.ndim != 2:
            raise ValueError(f"expected a 2-D field, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("cannot normalize a field with non-finite values")
    lo = f.min()
    hi = f.max()
    if hi == lo:
        out = np.full_like(f, 0.5)
    else:
        out = (f - lo) / (hi - lo)
        np.clip(out, 0.0, 1.0, out=out)  # guard fp overshoot at the edges
    return ImagePlane.from_array(out)


def save_reconstruction(path, recon: Reconstruction) -> None:
    """Raw float32 GIRC dump (header mirrors the pattern format)."""
    with open(path, "wb") as fh:
        _binio.write_magic(fh, RECON_MAGIC, RECON_FORMAT_VERSION)
        _binio.write_u8(fh, RECON_METHODS.index(recon.method))
        _binio.write_u32(fh, recon.width)
        _binio.write_u32(fh, recon.height)
        fh.write(recon.field.astype("<f4").tobytes())


def load_reconstruction(path) -> Reconstruction:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot open reconstruction {path}: {exc}") from exc
    with fh:
        version = _binio.read_magic(fh, RECON_MAGIC)
        if version != RECON_FORMAT_VERSION:
            raise FormatError(f"unsupported GIRC version {version}")
        method_code = _binio.read_u8(fh)
        if method_code >= len(RECON_METHODS):
            raise FormatError(f"unknown method code {method_code}")
        width = _binio.read_u32(fh)
        height = _binio.read_u32(fh)
        raw = fh.read(width * height * 4)
        if len(raw) != width * height * 4:
            raise CorruptionError("reconstruction payload truncated")
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(height, width)
    return Reconstruction(width=width, height=height, field=data,
                          method=RECON_METHODS[method_code])
