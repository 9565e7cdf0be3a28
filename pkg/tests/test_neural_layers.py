import numpy as np
import pytest

from ghostkit.neural.layers import (
    batch_norm,
    batch_norm_backward,
    conv2d,
    conv2d_backward,
    relu,
    relu_backward,
)


def central_difference(f, x, eps=1e-5):
    """Elementwise central finite-difference gradient of a scalar function."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def max_rel_error(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


class TestConv2d:
    def test_scalar_affine(self):
        out, _ = conv2d(np.array([[[5.0]]]), np.array([[[[2.0]]]]), np.array([1.0]))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 11.0

    def test_identity_kernel(self):
        x = np.random.default_rng(0).random((1, 5, 5))
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        out, _ = conv2d(x, kernel, np.zeros(1))
        assert np.allclose(out, x, atol=1e-15)

    def test_shape_preserved_multi_channel(self):
        x = np.random.default_rng(1).random((2, 3, 7, 9))
        kernel = np.random.default_rng(2).standard_normal((4, 3, 3, 3))
        out, _ = conv2d(x, kernel, np.zeros(4))
        assert out.shape == (2, 4, 7, 9)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))

    def test_stride_other_than_one_rejected(self):
        with pytest.raises(ValueError):
            conv2d(np.zeros((1, 4, 4)), np.zeros((1, 1, 3, 3)), np.zeros(1), stride=2)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        x = rng.random((1, 5, 5))
        kernel = rng.standard_normal((2, 1, 3, 3))
        bias = rng.standard_normal(2)
        weights = rng.standard_normal((2, 5, 5))  # fixed scalarizer

        def loss():
            out, _ = conv2d(x, kernel, bias)
            return float(np.sum(out * weights))

        out, cache = conv2d(x, kernel, bias)
        dx, dk, db = conv2d_backward(weights, cache)
        assert max_rel_error(dx, central_difference(loss, x)) <= 1e-4
        assert max_rel_error(dk, central_difference(loss, kernel)) <= 1e-4
        assert max_rel_error(db, central_difference(loss, bias)) <= 1e-4

    def test_matches_direct_convolution(self):
        # independent dense oracle: explicit loops over output positions
        rng = np.random.default_rng(4)
        x = rng.random((2, 6, 6))
        kernel = rng.standard_normal((3, 2, 3, 3))
        bias = rng.standard_normal(3)
        out, _ = conv2d(x, kernel, bias)
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        expected = np.zeros((3, 6, 6))
        for co in range(3):
            for i in range(6):
                for j in range(6):
                    expected[co, i, j] = (
                        np.sum(xp[:, i:i + 3, j:j + 3] * kernel[co]) + bias[co]
                    )
        assert np.allclose(out, expected, atol=1e-12)


class TestRelu:
    def test_basic_values(self):
        out, _ = relu(np.array([-1.0, 2.0]))
        assert np.array_equal(out, [0.0, 2.0])

    def test_all_negative_blocks_gradient(self):
        x = -np.ones((1, 3, 3))
        out, mask = relu(x)
        assert not out.any()
        assert not relu_backward(np.ones_like(x), mask).any()

    def test_gradient_away_from_kinks(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 4, 4))
        x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
        weights = rng.standard_normal(x.shape)

        def loss():
            out, _ = relu(x)
            return float(np.sum(out * weights))

        _, mask = relu(x)
        analytic = relu_backward(weights, mask)
        assert max_rel_error(analytic, central_difference(loss, x)) <= 1e-6


class TestBatchNorm:
    def _stats(self, c):
        return np.ones(c), np.zeros(c), np.zeros(c), np.ones(c)

    def test_two_value_channel_normalises_to_unit(self):
        x = np.array([0.0, 2.0]).reshape(2, 1, 1, 1)  # batch of 2, one channel
        gamma, beta, rm, rv = self._stats(1)
        out, _, _, _ = batch_norm(x, gamma, beta, rm, rv, training=True, eps=1e-5)
        assert np.allclose(out.reshape(-1), [-1.0, 1.0], atol=1e-3)

    def test_train_mode_statistics(self):
        # output variance is var/(var+eps); keep eps negligible to test the
        # biased-estimator normalisation itself
        rng = np.random.default_rng(6)
        x = rng.random((4, 3, 5, 5)) * 3 + 1
        gamma, beta, rm, rv = self._stats(3)
        out, _, _, _ = batch_norm(x, gamma, beta, rm, rv, training=True, eps=1e-12)
        mean = out.mean(axis=(0, 2, 3))
        var = out.var(axis=(0, 2, 3))
        assert np.max(np.abs(mean)) <= 1e-9
        assert np.max(np.abs(var - 1.0)) <= 1e-6

    def test_running_stats_momentum_and_unbiased(self):
        rng = np.random.default_rng(7)
        x = rng.random((2, 1, 4, 4))
        gamma, beta, rm, rv = self._stats(1)
        rm[:] = 0.5
        rv[:] = 2.0
        _, _, new_rm, new_rv = batch_norm(x, gamma, beta, rm, rv, training=True)
        count = 2 * 4 * 4
        assert np.allclose(new_rm, 0.9 * 0.5 + 0.1 * x.mean())
        assert np.allclose(new_rv, 0.9 * 2.0 + 0.1 * x.var() * count / (count - 1))

    def test_eval_mode_uses_running_stats(self):
        x = np.full((1, 1, 2, 2), 3.0)
        out, _, _, _ = batch_norm(x, np.ones(1), np.zeros(1), np.array([1.0]),
                                  np.array([4.0]), training=False, eps=0.0)
        assert np.allclose(out, (3.0 - 1.0) / 2.0)

    def test_single_value_training_rejected(self):
        with pytest.raises(ValueError):
            batch_norm(np.ones((1, 1, 1, 1)), np.ones(1), np.zeros(1),
                       np.zeros(1), np.ones(1), training=True)

    def test_full_backward_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        x = rng.random((2, 2, 3, 3)) * 2
        gamma = rng.uniform(0.5, 1.5, 2)
        beta = rng.standard_normal(2)
        rm, rv = np.zeros(2), np.ones(2)
        weights = rng.standard_normal(x.shape)

        def loss():
            out, _, _, _ = batch_norm(x, gamma, beta, rm, rv, training=True)
            return float(np.sum(out * weights))

        _, cache, _, _ = batch_norm(x, gamma, beta, rm, rv, training=True)
        dx, dg, db = batch_norm_backward(weights, cache)
        assert max_rel_error(dx, central_difference(loss, x)) <= 1e-4
        assert max_rel_error(dg, central_difference(loss, gamma)) <= 1e-4
        assert max_rel_error(db, central_difference(loss, beta)) <= 1e-4

    def test_eval_cache_has_no_backward(self):
        x = np.ones((1, 1, 2, 2))
        _, cache, _, _ = batch_norm(x, np.ones(1), np.zeros(1), np.zeros(1),
                                    np.ones(1), training=False)
        with pytest.raises(ValueError):
            batch_norm_backward(np.ones_like(x), cache)
