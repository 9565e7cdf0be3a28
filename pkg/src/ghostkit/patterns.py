"""Illumination pattern synthesis and linear-independence diagnostics.

A :class:`PatternStack` is the M x N matrix of illumination patterns, one
flattened pattern per row. Generators cover fixed random speckles (binary or
uniform), a Sylvester-Hadamard reference basis, and far-field interference
speckles from a small set of pinhole emitters. All generators are
deterministic: the random stream for pattern ``j`` is derived from
``(seed, j)``, so stacks are reproducible regardless of generation order.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from scipy.linalg import hadamard as sylvester_hadamard

from . import _binio
from .errors import CorruptionError, FormatError, ResourceLimitError, UnsupportedSizeError

PATTERN_KINDS = ("random-binary", "random-uniform", "hadamard", "interference")

# stream tags for per-purpose RNG derivation (see derived_rng)
_STREAM_PATTERN = 1
_STREAM_EMITTERS = 2

STACK_MAGIC = b"GIPS"
STACK_FORMAT_VERSION = 1

# gram_diagnostics forms the dense N x N Gram matrix; cap N by default
DEFAULT_GRAM_PIXEL_CAP = 4096


def derived_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for stream ``key`` under a master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


@dataclass(frozen=True)
class PatternStack:
    """Stack of M illumination patterns over a width x height pixel grid.

    ``data`` has shape (M, width*height), float32, one row-major flattened
    pattern per row. Entries lie in [0, 1] except for the signed Hadamard
    form (params["remap"] == "signed"), which keeps the exact {-1, +1}
    representation for orthogonality oracles.
    """

    kind: str
    seed: int
    width: int
    height: int
    data: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if self.width < 1 or self.height < 1:
            raise ValueError("pattern dimensions must be at least 1x1")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2 or data.shape[1] != self.width * self.height:
            raise ValueError(
                f"data must have shape (M, {self.width * self.height}), got {data.shape}"
            )
        if data.shape[0] < 1:
            raise ValueError("stack must contain at least one pattern")
        if not np.all(np.isfinite(data)):
            raise ValueError("pattern data contains non-finite values")
        lo = -1.0 if self.params.get("remap") == "signed" else 0.0
        if data.min() < lo or data.max() > 1.0:
            raise ValueError(f"pattern intensities must lie in [{lo}, 1]")
        object.__setattr__(self, "data", data)

    @property
    def m_patterns(self) -> int:
        return self.data.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    @property
    def sampling_rate(self) -> float:
        """Number of patterns divided by the number of resolution pixels."""
        return self.m_patterns / self.n_pixels

    def pattern_image(self, j: int) -> np.ndarray:
        """Pattern ``j`` reshaped to (height, width)."""
        return self.data[j].reshape(self.height, self.width)


@dataclass(frozen=True)
class EmitterLayout:
    """Geometry of a pinhole-emitter interference source.

    Distances are millimetres except ``wavelength_nm`` (nanometres) and
    ``propagation_distance_m`` (metres). ``detector_pitch_mm`` of ``None``
    selects a pitch such that one fringe of the widest emitter pair spans at
    least four detector pixels.
    """

    emitter_count: int = 24
    disk_diameter_mm: float = 5.0
    pinhole_diameter_mm: float = 0.2
    wavelength_nm: float = 632.8
    propagation_distance_m: float = 1.0
    detector_pitch_mm: float | None = None

    def __post_init__(self):
        if self.emitter_count < 1:
            raise ValueError("emitter_count must be at least 1")
        for name in (
            "disk_diameter_mm",
            "pinhole_diameter_mm",
            "wavelength_nm",
            "propagation_distance_m",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.detector_pitch_mm is not None and self.detector_pitch_mm <= 0:
            raise ValueError("detector_pitch_mm must be strictly positive")
        if self.pinhole_diameter_mm >= self.disk_diameter_mm:
            raise ValueError("pinholes must be smaller than the source disk")

    @property
    def effective_detector_pitch_mm(self) -> float:
        if self.detector_pitch_mm is not None:
            return self.detector_pitch_mm
        # finest fringe period is lambda*z/D for the widest pair; 4 px per fringe
        wavelength_m = self.wavelength_nm * 1e-9
        period_m = wavelength_m * self.propagation_distance_m / (self.disk_diameter_mm * 1e-3)
        return period_m * 1e3 / 4.0

    def as_params(self) -> dict:
        return {
            "emitter_count": self.emitter_count,
            "disk_diameter_mm": self.disk_diameter_mm,
            "pinhole_diameter_mm": self.pinhole_diameter_mm,
            "wavelength_nm": self.wavelength_nm,
            "propagation_distance_m": self.propagation_distance_m,
            "detector_pitch_mm": self.effective_detector_pitch_mm,
        }


@dataclass(frozen=True)
class GramDiagnostics:
    """How far the pattern Gram matrix is from a scaled identity.

    ``frobenius_deviation`` is ||G/s - I||_F for the scale s minimising it,
    zero exactly when the pattern columns are orthogonal with equal norms.
    ``condition_number`` is +inf when the stack cannot determine the object
    (fewer patterns than pixels, or numerically rank deficient).
    """

    frobenius_deviation: float
    max_off_diagonal_coherence: float
    condition_number: float


def gen_random_patterns(
    seed: int, m_patterns: int, width: int, height: int, distribution: str = "binary"
) -> PatternStack:
    """Generate a stack of fixed random speckle patterns.

    ``distribution`` is "binary" (entries 0/1 with p=0.5) or "uniform"
    (entries uniform on [0, 1]). Deterministic in all arguments.
    """
    if m_patterns < 1:
        raise ValueError("m_patterns must be at least 1")
    if width < 1 or height < 1:
        raise ValueError("pattern dimensions must be at least 1x1")
    if distribution not in ("binary", "uniform"):
        raise ValueError(f"unknown distribution {distribution!r}")
    n = width * height
    data = np.empty((m_patterns, n), dtype=np.float32)
    for j in range(m_patterns):
        rng = derived_rng(seed, _STREAM_PATTERN, j)
        u = rng.random(n)
        if distribution == "binary":
            data[j] = (u < 0.5).astype(np.float32)
        else:
            data[j] = u.astype(np.float32)
    kind = "random-binary" if distribution == "binary" else "random-uniform"
    return PatternStack(kind=kind, seed=seed, width=width, height=height, data=data,
                        params={"distribution": distribution})


def gen_hadamard_patterns(width: int, height: int, signed: bool = False) -> PatternStack:
    """Sylvester-Hadamard reference basis reshaped to 2-D patterns.

    Requires width*height to be a power of 4. The default stack remaps the
    {-1, +1} rows to {0, 1} intensities; ``signed=True`` keeps the signed
    form, whose Gram matrix is exactly N*I.
    """
    n = width * height
    if n < 1 or (n & (n - 1)) != 0 or (n.bit_length() - 1) % 2 != 0:
        raise UnsupportedSizeError(
            f"Hadamard stack needs width*height to be a power of 4, got {width}x{height}={n}"
        )
    h = sylvester_hadamard(n)  # integer matrix, rows orthogonal, HH^T = N*I
    if signed:
        data = h.astype(np.float32)
        params = {"remap": "signed"}
    else:
        data = ((h + 1) // 2).astype(np.float32)
        params = {"remap": "unit", "remap_rule": "(h + 1) / 2"}
    return PatternStack(kind="hadamard", seed=0, width=width, height=height,
                        data=data, params=params)


def hadamard_signed(stack: PatternStack) -> PatternStack:
    """Signed {-1, +1} view of a unit-remapped Hadamard stack."""
    if stack.kind != "hadamard":
        raise ValueError("signed view only defined for Hadamard stacks")
    if stack.params.get("remap") == "signed":
        return stack
    data = (stack.data * 2.0 - 1.0).astype(np.float32)
    return replace(stack, data=data, params={"remap": "signed"})


def sample_emitter_positions(layout: EmitterLayout, seed: int) -> np.ndarray:
    """Draw emitter centres uniformly in the source disk, pinholes disjoint.

    Returns (K, 2) positions in millimetres. Centres are kept a pinhole
    radius away from the rim so every pinhole lies strictly inside the disk,
    and rejection sampling enforces pairwise centre separation of at least
    one pinhole diameter.
    """
    rng = derived_rng(seed, _STREAM_EMITTERS)
    r_max = layout.disk_diameter_mm / 2.0 - layout.pinhole_diameter_mm / 2.0
    min_sep = layout.pinhole_diameter_mm
    positions = np.empty((layout.emitter_count, 2))
    placed = 0
    attempts = 0
    max_attempts = 10_000 * layout.emitter_count
    while placed < layout.emitter_count:
        if attempts >= max_attempts:
            raise ValueError(
                f"could not place {layout.emitter_count} non-overlapping pinholes "
                f"in a {layout.disk_diameter_mm} mm disk"
            )
        attempts += 1
        radius = r_max * math.sqrt(rng.random())
        theta = 2.0 * math.pi * rng.random()
        candidate = np.array([radius * math.cos(theta), radius * math.sin(theta)])
        if placed and np.min(np.linalg.norm(positions[:placed] - candidate, axis=1)) < min_sep:
            continue
        positions[placed] = candidate
        placed += 1
    return positions


def detector_grid(layout: EmitterLayout, width: int, height: int) -> np.ndarray:
    """Centered detector pixel coordinates in metres, shape (width*height, 2)."""
    pitch_m = layout.effective_detector_pitch_mm * 1e-3
    xs = (np.arange(width) - (width - 1) / 2.0) * pitch_m
    ys = (np.arange(height) - (height - 1) / 2.0) * pitch_m
    gx, gy = np.meshgrid(xs, ys)  # row-major: y varies over rows
    return np.column_stack([gx.ravel(), gy.ravel()])


def interference_intensity(
    layout: EmitterLayout,
    positions_mm: np.ndarray,
    phases: np.ndarray,
    width: int,
    height: int,
) -> np.ndarray:
    """Raw far-field intensity |sum_k exp(i(phi_k + 2pi/(lambda z) rho_k . x))|^2.

    Fraunhofer point-emitter model: emitter k at rho_k (source plane)
    contributes a plane-wave phase ramp across the detector. Returns the
    unnormalised intensity as a flat (width*height,) array.
    """
    wavelength_m = layout.wavelength_nm * 1e-9
    z = layout.propagation_distance_m
    coupling = 2.0 * math.pi / (wavelength_m * z)
    grid = detector_grid(layout, width, height)  # (N, 2) metres
    geometric = coupling * (positions_mm * 1e-3) @ grid.T  # (K, N) radians
    field_sum = (np.exp(1j * phases)[:, None] * np.exp(1j * geometric)).sum(axis=0)
    return np.abs(field_sum) ** 2


def gen_interference_patterns(
    layout: EmitterLayout, seed: int, m_patterns: int, width: int, height: int
) -> PatternStack:
    """Speckle stack from random-phase interference of fixed pinhole emitters.

    Emitter positions are drawn once per (layout, seed); each pattern draws
    fresh uniform phases on [0, 2pi). The whole stack is scaled by its global
    maximum so intensities land in [0, 1].
    """
    if layout.emitter_count < 2:
        raise ValueError("interference needs at least 2 emitters")
    if m_patterns < 1:
        raise ValueError("m_patterns must be at least 1")
    if width < 1 or height < 1:
        raise ValueError("pattern dimensions must be at least 1x1")
    positions = sample_emitter_positions(layout, seed)
    wavelength_m = layout.wavelength_nm * 1e-9
    coupling = 2.0 * math.pi / (wavelength_m * layout.propagation_distance_m)
    grid = detector_grid(layout, width, height)
    geometric_phasor = np.exp(1j * coupling * (positions * 1e-3) @ grid.T)  # (K, N)
    amplitudes = np.empty((m_patterns, layout.emitter_count), dtype=np.complex128)
    for j in range(m_patterns):
        rng = derived_rng(seed, _STREAM_PATTERN, j)
        amplitudes[j] = np.exp(1j * rng.uniform(0.0, 2.0 * math.pi, layout.emitter_count))
    intensity = np.abs(amplitudes @ geometric_phasor) ** 2  # (M, N), >= 0
    data = (intensity / intensity.max()).astype(np.float32)
    # float32 rounding can nudge the maximum a hair above 1
    np.clip(data, 0.0, 1.0, out=data)
    params = {**layout.as_params(), "emitter_positions_mm": positions.tolist()}
    return PatternStack(kind="interference", seed=seed, width=width, height=height,
                        data=data, params=params)


PatternsLike = Union[PatternStack, np.ndarray]


def pattern_matrix(patterns: PatternsLike, n_pixels: int | None = None) -> np.ndarray:
    """The (M, N) float64 measurement matrix behind a stack or raw array.

    Raw arrays are accepted wherever pattern provenance is irrelevant (e.g.
    Gaussian sensing matrices for sparse-recovery studies).
    """
    if isinstance(patterns, PatternStack):
        mat = patterns.data
    else:
        mat = np.asarray(patterns)
        if mat.ndim != 2:
            raise ValueError(f"pattern matrix must be 2-D, got shape {mat.shape}")
    if n_pixels is not None and mat.shape[1] != n_pixels:
        raise ValueError(
            f"pattern matrix has {mat.shape[1]} pixels per row, expected {n_pixels}"
        )
    return np.ascontiguousarray(mat, dtype=np.float64)


def gram_diagnostics(
    patterns: PatternsLike, max_pixels: int = DEFAULT_GRAM_PIXEL_CAP
) -> GramDiagnostics:
    """Quantify linear independence of the pattern columns via P^T P.

    Forms the dense N x N Gram matrix, so N is capped (default 4096);
    larger stacks raise :class:`ResourceLimitError`. The condition number is
    computed from the singular values of P and reported as +inf when the
    object is underdetermined (M < N) or P is numerically rank deficient.
    Invariant under row permutation of the stack.
    """
    p = pattern_matrix(patterns)
    m, n = p.shape
    if n > max_pixels:
        raise ResourceLimitError(
            f"gram_diagnostics forms an N x N matrix; N={n} exceeds the cap of {max_pixels}"
        )
    g = p.T @ p
    trace = float(np.trace(g))
    frob_sq = float(np.sum(g * g))
    scale = frob_sq / trace if trace > 0 else 1.0
    eye = np.eye(n)
    deviation = float(np.linalg.norm(g / scale - eye))

    norms = np.sqrt(np.diag(g))
    denom = np.outer(norms, norms)
    with np.errstate(divide="ignore", invalid="ignore"):
        coherence = np.abs(g) / denom
    coherence[~np.isfinite(coherence)] = 0.0  # all-zero columns contribute nothing
    np.fill_diagonal(coherence, 0.0)
    max_coherence = float(min(coherence.max(initial=0.0), 1.0))

    if m < n:
        cond = math.inf
    else:
        sv = np.linalg.svd(p, compute_uv=False)
        tol = max(m, n) * np.finfo(np.float64).eps * sv[0]
        cond = math.inf if sv[-1] <= tol else float(sv[0] / sv[-1])
    return GramDiagnostics(
        frobenius_deviation=deviation,
        max_off_diagonal_coherence=max_coherence,
        condition_number=cond,
    )


def take_patterns(stack: PatternStack, m_patterns: int) -> PatternStack:
    """First ``m_patterns`` rows of a stack (prefix subsampling)."""
    if not (1 <= m_patterns <= stack.m_patterns):
        raise ValueError(
            f"m_patterns must be in [1, {stack.m_patterns}], got {m_patterns}"
        )
    if m_patterns == stack.m_patterns:
        return stack
    params = {**stack.params, "prefix_of": stack.m_patterns}
    return replace(stack, data=stack.data[:m_patterns].copy(), params=params)


_KIND_CODES = {kind: i for i, kind in enumerate(PATTERN_KINDS)}


def _write_stack(fh, stack: PatternStack) -> None:
    _binio.write_magic(fh, STACK_MAGIC, STACK_FORMAT_VERSION)
    _binio.write_u8(fh, _KIND_CODES[stack.kind])
    _binio.write_u64(fh, stack.seed)
    _binio.write_u32(fh, stack.m_patterns)
    _binio.write_u32(fh, stack.width)
    _binio.write_u32(fh, stack.height)
    _binio.write_bytes_block(fh, json.dumps(stack.params, sort_keys=True).encode())
    fh.write(stack.data.astype("<f4").tobytes())


def save_stack(path, stack: PatternStack) -> None:
    """Write a stack in the GIPS binary format (bit-exact round trip)."""
    with open(path, "wb") as fh:
        _write_stack(fh, stack)


def load_stack(path) -> PatternStack:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot open pattern stack {path}: {exc}") from exc
    with fh:
        version = _binio.read_magic(fh, STACK_MAGIC)
        if version != STACK_FORMAT_VERSION:
            raise FormatError(f"unsupported GIPS version {version}")
        kind_code = _binio.read_u8(fh)
        if kind_code >= len(PATTERN_KINDS):
            raise FormatError(f"unknown pattern kind code {kind_code}")
        seed = _binio.read_u64(fh)
        m = _binio.read_u32(fh)
        width = _binio.read_u32(fh)
        height = _binio.read_u32(fh)
        params = json.loads(_binio.read_bytes_block(fh).decode())
        dt = np.dtype("<f4")
        raw = fh.read(m * width * height * dt.itemsize)
        if len(raw) != m * width * height * dt.itemsize:
            raise CorruptionError("pattern stack payload truncated")
        data = np.frombuffer(raw, dtype=dt).reshape(m, width * height).copy()
    return PatternStack(kind=PATTERN_KINDS[kind_code], seed=seed, width=width,
                        height=height, data=data, params=params)


def stack_checksum(stack: PatternStack) -> str:
    """SHA-256 of the stack's canonical GIPS serialization."""
    buf = io.BytesIO()
    _write_stack(buf, stack)
    return hashlib.sha256(buf.getvalue()).hexdigest()
