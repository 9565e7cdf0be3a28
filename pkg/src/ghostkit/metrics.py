"""PSNR and SSIM image-quality metrics.

Both accept (H, W) arrays or :class:`~ghostkit.forward.ImagePlane` values.
SSIM uses the canonical 11x11 Gaussian window with sigma 1.5 and constants
k1=0.01, k2=0.03, averaged over valid window positions only (no padding).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .forward import ImagePlane


@dataclass(frozen=True)
class MetricReport:
    psnr: float  # dB; +inf for identical images
    ssim: float


def _as_image(x) -> np.ndarray:
    if isinstance(x, ImagePlane):
        return x.pixels
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"metric inputs must be 2-D images, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("metric input contains non-finite values")
    return arr


def psnr(reference, test, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); +inf when the images are identical."""
    ref = _as_image(reference)
    tst = _as_image(test)
    if ref.shape != tst.shape:
        raise ValueError(f"image shapes differ: {ref.shape} vs {tst.shape}")
    if peak <= 0:
        raise ValueError("peak must be strictly positive")
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalised 2-D Gaussian weighting window (sums to 1)."""
    if size < 1 or size % 2 == 0:
        raise ValueError("window size must be a positive odd integer")
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # (H-s+1, W-s+1, s, s) view; tensordot keeps memory modest at these sizes
    views = sliding_window_view(img, window.shape)
    return np.tensordot(views, window, axes=([2, 3], [0, 1]))


def ssim(
    reference,
    test,
    window_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    peak: float = 1.0,
) -> float:
    """Mean local structural similarity over valid window positions."""
    ref = _as_image(reference)
    tst = _as_image(test)
    if ref.shape != tst.shape:
        raise ValueError(f"image shapes differ: {ref.shape} vs {tst.shape}")
    if min(ref.shape) < window_size:
        raise ValueError(
            f"image {ref.shape} is smaller than the {window_size}x{window_size} window"
        )
    w = gaussian_window(window_size, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    mu_x = _windowed_mean(ref, w)
    mu_y = _windowed_mean(tst, w)
    var_x = _windowed_mean(ref * ref, w) - mu_x * mu_x
    var_y = _windowed_mean(tst * tst, w) - mu_y * mu_y
    cov = _windowed_mean(ref * tst, w) - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def report(reference, test, peak: float = 1.0) -> MetricReport:
    return MetricReport(psnr=psnr(reference, test, peak=peak),
                        ssim=ssim(reference, test, peak=peak))
