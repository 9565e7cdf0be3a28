"""Scikit-learn-style estimators wrapping the functional core.

These make the pipeline compose with the wider ecosystem: a measurement is
a transformer from image batches to bucket batches, reconstruction is the
inverse transform, and the residual denoiser is a fit/predict estimator.

    pipe = make_pipeline(
        BucketSampler(stack),
        CorrelationReconstructor(stack),
    )
    noisy = pipe.transform(images)
    denoiser = ResidualDenoiser(epochs=25).fit(noisy, images)
    cleaned = denoiser.predict(noisy)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .forward import measure, measure_noisy
from .metrics import psnr
from .neural.network import NetworkSpec, TrainingPair, denoise, forward_residual_batch
from .neural.training import TrainConfig, train
from .patterns import PatternStack
from .recon import bc_reconstruct, normalize_for_display, omp_reconstruct


def _image_batch(X) -> np.ndarray:
    """Validate and stack input as a (n_samples, H, W) float64 array."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        arr = X.astype(np.float64)
    else:
        arr = np.stack([np.asarray(getattr(x, "pixels", x), dtype=np.float64) for x in X])
    if arr.ndim != 3:
        raise ValueError(f"expected a batch of 2-D images, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image batch contains non-finite values")
    return arr


class BucketSampler(TransformerMixin, BaseEstimator):
    """Transform images into bucket-detection vectors under a fixed stack."""

    def __init__(self, stack: PatternStack, noise: str = "none",
                 noise_level: float = 0.0, seed: int = 0):
        self.stack = stack
        self.noise = noise
        self.noise_level = noise_level
        self.seed = seed

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        images = _image_batch(X)
        out = np.empty((images.shape[0], self.stack.m_patterns))
        for i, img in enumerate(images):
            if self.noise == "none":
                out[i] = measure(self.stack, img.reshape(-1)).values
            else:
                out[i] = measure_noisy(self.stack, img.reshape(-1), noise=self.noise,
                                       level=self.noise_level, seed=self.seed + i).values
        return out


class CorrelationReconstructor(TransformerMixin, BaseEstimator):
    """Transform bucket vectors into correlation images (optionally normalised)."""

    def __init__(self, stack: PatternStack, mode: str = "plain", normalize: bool = True):
        self.stack = stack
        self.mode = mode
        self.normalize = normalize

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        buckets = np.asarray(X, dtype=np.float64)
        if buckets.ndim == 1:
            buckets = buckets[None]
        out = np.empty((buckets.shape[0], self.stack.height, self.stack.width))
        for i, b in enumerate(buckets):
            recon = bc_reconstruct(self.stack, b, mode=self.mode)
            out[i] = normalize_for_display(recon).pixels if self.normalize else recon.field
        return out


class MatchingPursuitReconstructor(TransformerMixin, BaseEstimator):
    """Greedy sparse recovery of images from bucket vectors."""

    def __init__(self, stack: PatternStack, basis: str = "dct2d",
                 sparsity_k: int | None = None, residual_tol: float | None = None,
                 normalize: bool = True):
        self.stack = stack
        self.basis = basis
        self.sparsity_k = sparsity_k
        self.residual_tol = residual_tol
        self.normalize = normalize

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        buckets = np.asarray(X, dtype=np.float64)
        if buckets.ndim == 1:
            buckets = buckets[None]
        out = np.empty((buckets.shape[0], self.stack.height, self.stack.width))
        for i, b in enumerate(buckets):
            recon = omp_reconstruct(self.stack, b, basis=self.basis,
                                    sparsity_k=self.sparsity_k,
                                    residual_tol=self.residual_tol)
            out[i] = normalize_for_display(recon).pixels if self.normalize else recon.field
        return out


class ResidualDenoiser(BaseEstimator):
    """Residual-learning denoiser with a fit(noisy, clean)/predict interface.

    After :meth:`fit`, ``params_`` holds the trained network, ``loss_curve_``
    the per-epoch mean loss, and ``checkpoints_`` any parameter snapshots
    requested through ``checkpoint_epochs``.
    """

    def __init__(self, depth: int = 7, channels: int = 32, kernel: int = 3,
                 epochs: int = 25, batch_size: int = 16, learning_rate: float = 1e-3,
                 optimizer: str = "adam", augmentation: str = "none",
                 grad_clip: float | None = None, seed: int = 0,
                 checkpoint_epochs: tuple[int, ...] = ()):
        self.depth = depth
        self.channels = channels
        self.kernel = kernel
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.augmentation = augmentation
        self.grad_clip = grad_clip
        self.seed = seed
        self.checkpoint_epochs = checkpoint_epochs

    def fit(self, X, y):
        """Train on noisy images ``X`` against clean targets ``y``."""
        noisy = _image_batch(X)
        clean = _image_batch(y)
        if noisy.shape != clean.shape:
            raise ValueError(f"noisy {noisy.shape} and clean {clean.shape} batches differ")
        pairs = [TrainingPair(noisy=n, clean=c) for n, c in zip(noisy, clean)]
        spec = NetworkSpec(depth=self.depth, channels=self.channels, kernel=self.kernel)
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            augmentation=self.augmentation,
            shuffle_seed=self.seed,
            grad_clip=self.grad_clip,
            checkpoint_epochs=tuple(self.checkpoint_epochs),
        )
        result = train(spec, pairs, config, init_seed=self.seed)
        self.params_ = result.params
        self.loss_curve_ = result.loss_curve
        self.checkpoints_ = result.checkpoints
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise RuntimeError("this ResidualDenoiser instance is not fitted yet")
        noisy = _image_batch(X)
        return np.stack([denoise(self.params_, img).pixels for img in noisy])

    def predict_residual(self, X) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise RuntimeError("this ResidualDenoiser instance is not fitted yet")
        return forward_residual_batch(self.params_, _image_batch(X))

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of the denoised output against the clean targets."""
        clean = _image_batch(y)
        denoised = self.predict(X)
        return float(np.mean([psnr(c, d) for c, d in zip(clean, denoised)]))
