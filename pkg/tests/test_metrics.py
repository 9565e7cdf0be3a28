import math

import numpy as np
import pytest

from ghostkit.metrics import gaussian_window, psnr, report, ssim


def test_psnr_identical_images_is_infinite():
    img = np.random.default_rng(0).random((16, 16))
    assert psnr(img, img) == math.inf


def test_psnr_uniform_difference_is_20db():
    ref = np.full((8, 8), 0.3)
    tst = np.full((8, 8), 0.4)
    assert psnr(ref, tst) == pytest.approx(20.0, abs=1e-9)


def test_psnr_mse_one_peak_255():
    ref = np.zeros((10, 10))
    tst = np.ones((10, 10))  # MSE exactly 1
    assert psnr(ref, tst, peak=255.0) == pytest.approx(48.1308, abs=1e-3)


def test_psnr_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_psnr_monotone_in_noise_scale():
    rng = np.random.default_rng(1)
    ref = rng.random((32, 32))
    noise = rng.standard_normal((32, 32))
    values = [psnr(ref, ref + alpha * noise) for alpha in (0.01, 0.02, 0.05, 0.1, 0.5)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_psnr_invariant_under_joint_permutation():
    rng = np.random.default_rng(2)
    ref = rng.random((8, 8))
    tst = rng.random((8, 8))
    perm = rng.permutation(64)
    assert psnr(ref, tst) == pytest.approx(
        psnr(ref.reshape(-1)[perm].reshape(8, 8), tst.reshape(-1)[perm].reshape(8, 8)),
        rel=1e-12,
    )


class TestSSIM:
    def test_identical_images_is_one(self):
        img = np.random.default_rng(3).random((16, 16))
        assert ssim(img, img) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        a = rng.random((20, 20))
        b = rng.random((20, 20))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_inverted_contrast_is_negative(self):
        rng = np.random.default_rng(5)
        ref = rng.random((24, 24))
        assert ssim(ref, 1.0 - ref) < 0.0

    def test_constant_images_luminance_closed_form(self):
        c1, c2 = 0.3, 0.7
        got = ssim(np.full((16, 16), c1), np.full((16, 16), c2))
        k1 = 0.01
        expected = (2 * c1 * c2 + k1**2) / (c1**2 + c2**2 + k1**2)
        assert got == pytest.approx(expected, abs=1e-9)

    def test_image_smaller_than_window_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_window_normalised(self):
        w = gaussian_window(11, 1.5)
        assert w.shape == (11, 11)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(ValueError):
            gaussian_window(10)


def test_report_bundles_both_metrics():
    rng = np.random.default_rng(6)
    ref = rng.random((16, 16))
    rep = report(ref, ref)
    assert rep.psnr == math.inf
    assert rep.ssim == 1.0
