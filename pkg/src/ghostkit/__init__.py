"""Ghost-imaging simulation, reconstruction and speckle-conditioned denoising.

The pipeline: synthesize an illumination :class:`~ghostkit.patterns.PatternStack`,
measure bucket detections of an object, reconstruct by correlation or
matching pursuit, and (the interesting part) train a residual denoiser on
pairs produced under one *fixed* speckle sequence so it learns that
sequence's artifact structure.
"""

from . import datapipe, estimators, forward, harness, metrics, neural, patterns, recon
from .errors import (
    CorruptionError,
    FormatError,
    GhostKitError,
    PlanError,
    ResourceLimitError,
    TrainingDivergedError,
    UnsupportedSizeError,
)
from .estimators import (
    BucketSampler,
    CorrelationReconstructor,
    MatchingPursuitReconstructor,
    ResidualDenoiser,
)
from .forward import BucketSeries, ImagePlane, measure, measure_noisy
from .metrics import MetricReport, psnr, ssim
from .neural import NetworkParams, NetworkSpec, TrainConfig, TrainingPair, denoise, train
from .patterns import (
    EmitterLayout,
    GramDiagnostics,
    PatternStack,
    gen_hadamard_patterns,
    gen_interference_patterns,
    gen_random_patterns,
    gram_diagnostics,
)
from .recon import (
    Reconstruction,
    ResidualField,
    bc_reconstruct,
    normalize_for_display,
    omp_reconstruct,
    residual_decompose,
)

__version__ = "0.1.0"

__all__ = [
    "BucketSampler",
    "BucketSeries",
    "CorrelationReconstructor",
    "CorruptionError",
    "EmitterLayout",
    "FormatError",
    "GhostKitError",
    "GramDiagnostics",
    "ImagePlane",
    "MatchingPursuitReconstructor",
    "MetricReport",
    "NetworkParams",
    "NetworkSpec",
    "PatternStack",
    "PlanError",
    "Reconstruction",
    "ResidualDenoiser",
    "ResidualField",
    "ResourceLimitError",
    "TrainConfig",
    "TrainingDivergedError",
    "TrainingPair",
    "UnsupportedSizeError",
    "bc_reconstruct",
    "datapipe",
    "denoise",
    "estimators",
    "forward",
    "gen_hadamard_patterns",
    "gen_interference_patterns",
    "gen_random_patterns",
    "gram_diagnostics",
    "harness",
    "measure",
    "measure_noisy",
    "metrics",
    "neural",
    "normalize_for_display",
    "omp_reconstruct",
    "patterns",
    "psnr",
    "recon",
    "residual_decompose",
    "ssim",
    "train",
]
