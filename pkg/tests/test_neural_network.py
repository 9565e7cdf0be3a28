import numpy as np
import pytest

from ghostkit.errors import CorruptionError
from ghostkit.forward import ImagePlane
from ghostkit.neural.network import (
    NetworkSpec,
    TrainingPair,
    denoise,
    forward_residual,
    forward_residual_batch,
    init_network,
    load_checkpoint,
    loss_gi,
    save_checkpoint,
    zero_params,
)
from ghostkit.recon import Reconstruction

TINY = NetworkSpec(depth=3, channels=4)


def flatten_params(params):
    return np.concatenate([t.reshape(-1) for t in params.trainable()])


class TestSpec:
    def test_depth_validation(self):
        with pytest.raises(ValueError):
            NetworkSpec(depth=2)

    def test_bn_placement(self):
        spec = NetworkSpec(depth=5, channels=8)
        assert [spec.has_bn(i) for i in range(5)] == [False, True, True, True, False]

    def test_layer_shapes(self):
        spec = NetworkSpec(depth=4, channels=8, input_channels=1)
        assert spec.layer_shapes(0) == (1, 8)
        assert spec.layer_shapes(1) == (8, 8)
        assert spec.layer_shapes(3) == (8, 1)


class TestInit:
    def test_deterministic(self):
        a = init_network(TINY, seed=42)
        b = init_network(TINY, seed=42)
        assert np.array_equal(flatten_params(a), flatten_params(b))

    def test_bn_init_identity(self):
        params = init_network(NetworkSpec(depth=5, channels=8), seed=0)
        for i, layer in enumerate(params.layers):
            if layer.has_bn:
                assert np.array_equal(layer.gamma, np.ones(8))
                assert np.array_equal(layer.beta, np.zeros(8))
                assert np.array_equal(layer.running_var, np.ones(8))

    def test_kernel_std_matches_fan_in_scaling(self):
        params = init_network(NetworkSpec(depth=4, channels=64), seed=1)
        kernel = params.layers[1].kernel  # 64 x 64 x 3 x 3, fan_in = 576
        target = np.sqrt(2.0 / 576)
        assert abs(kernel.std() - target) / target <= 0.10


class TestForward:
    def test_zero_params_zero_residual(self):
        params = zero_params(TINY)
        y = np.random.default_rng(0).random((16, 16))
        assert not forward_residual(params, y).any()

    @pytest.mark.parametrize("size", [(64, 64), (57, 57), (16, 32)])
    def test_output_shape_equals_input_shape(self, size):
        params = init_network(TINY, seed=2)
        y = np.random.default_rng(1).random(size)
        assert forward_residual(params, y).shape == size

    def test_too_small_input_rejected(self):
        params = init_network(TINY, seed=2)
        with pytest.raises(ValueError):
            forward_residual(params, np.ones((2, 2)))

    def test_batch_matches_single(self):
        params = init_network(TINY, seed=3)
        batch = np.random.default_rng(2).random((3, 8, 8))
        got = forward_residual_batch(params, batch)
        singles = np.stack([forward_residual(params, img) for img in batch])
        assert np.allclose(got, singles, atol=1e-12)


class TestLoss:
    def test_zero_network_equal_pair_zero_loss(self):
        params = zero_params(TINY)
        x = np.random.default_rng(3).random((8, 8))
        loss, grads, _ = loss_gi(params, [TrainingPair(noisy=x, clean=x)])
        assert loss == 0.0

    def test_zero_network_formula_value(self):
        # ||y - x||_F^2 = 8 -> loss = 8 / 2 = 4 with a zero residual net
        params = zero_params(TINY)
        clean = np.zeros((8, 8))
        noisy = clean.copy()
        noisy[0, 0] = 2.0
        noisy[1, 1] = 2.0
        loss, _, _ = loss_gi(params, [TrainingPair(noisy=noisy, clean=clean)])
        assert loss == pytest.approx(4.0, abs=1e-12)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            loss_gi(init_network(TINY, seed=0), [])

    def test_loss_non_negative(self):
        params = init_network(TINY, seed=4)
        rng = np.random.default_rng(4)
        pairs = [TrainingPair(noisy=rng.random((8, 8)), clean=rng.random((8, 8)))
                 for _ in range(3)]
        loss, _, _ = loss_gi(params, pairs)
        assert loss >= 0.0

    def test_end_to_end_gradient_check(self):
        # depth-3 network on an 8x8 input, every trainable tensor
        rng = np.random.default_rng(5)
        spec = NetworkSpec(depth=3, channels=3)
        params = init_network(spec, seed=5)
        pair = TrainingPair(noisy=rng.random((8, 8)), clean=rng.random((8, 8)))

        def loss_value():
            value, _, _ = loss_gi(params, [pair])
            return value

        _, grads, _ = loss_gi(params, [pair])
        eps = 1e-5
        worst = 0.0
        for tensor, grad in zip(params.trainable(), grads):
            flat = tensor.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = loss_value()
                flat[i] = orig - eps
                down = loss_value()
                flat[i] = orig
                numeric = (up - down) / (2 * eps)
                denom = max(abs(numeric), abs(gflat[i]), 1e-4)
                worst = max(worst, abs(numeric - gflat[i]) / denom)
        assert worst <= 1e-3

    def test_loss_zero_iff_residual_matches(self):
        params = init_network(TINY, seed=6)
        rng = np.random.default_rng(6)
        noisy = rng.random((8, 8))
        residual = forward_residual_batch(params, noisy[None], training=True)[0]
        clean = noisy - residual
        loss, _, _ = loss_gi(params, (noisy[None], clean[None]))
        assert loss <= 1e-20


class TestDenoise:
    def test_zero_network_returns_clamped_input(self):
        params = zero_params(TINY)
        y = np.random.default_rng(7).random((8, 8))
        out = denoise(params, y)
        assert np.array_equal(out.pixels, np.clip(y, 0.0, 1.0))

    def test_clean_input_identity(self):
        params = zero_params(TINY)
        img = ImagePlane.from_array(np.random.default_rng(8).random((8, 8)))
        assert np.array_equal(denoise(params, img).pixels, img.pixels)

    def test_reconstruction_input_is_normalised_first(self):
        params = zero_params(TINY)
        field = np.random.default_rng(9).random((8, 8)) * 40 - 10
        recon = Reconstruction(width=8, height=8, field=field, method="bc-plain")
        out = denoise(params, recon)
        expected = (field - field.min()) / (field.max() - field.min())
        assert np.allclose(out.pixels, expected, atol=1e-12)

    def test_definitional_identity(self):
        params = init_network(TINY, seed=10)
        y = np.random.default_rng(10).random((8, 8))
        manual = np.clip(y - forward_residual(params, y), 0.0, 1.0)
        assert np.array_equal(denoise(params, y).pixels, manual)


class TestCheckpointIO:
    def test_round_trip_bit_exact(self, tmp_path):
        params = init_network(NetworkSpec(depth=4, channels=6), seed=11)
        provenance = {"task": "speckle", "stack_checksum": "abc123"}
        path = tmp_path / "model.ginn"
        save_checkpoint(path, params, provenance)
        loaded, loaded_prov = load_checkpoint(path)
        assert loaded_prov == provenance
        assert loaded.spec == params.spec
        assert loaded.init_seed == params.init_seed
        assert np.array_equal(flatten_params(loaded), flatten_params(params))
        for a, b in zip(loaded.layers, params.layers):
            if a.has_bn:
                assert np.array_equal(a.running_mean, b.running_mean)
                assert np.array_equal(a.running_var, b.running_var)

    def test_deterministic_bytes(self, tmp_path):
        params = init_network(TINY, seed=12)
        p1, p2 = tmp_path / "a.ginn", tmp_path / "b.ginn"
        save_checkpoint(p1, params, {"k": 1})
        save_checkpoint(p2, params, {"k": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncation_detected(self, tmp_path):
        params = init_network(TINY, seed=13)
        path = tmp_path / "model.ginn"
        save_checkpoint(path, params)
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(CorruptionError):
            load_checkpoint(path)


class TestTrainingPair:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            TrainingPair(noisy=np.zeros((4, 4)), clean=np.zeros((4, 5)))

    def test_residual_property(self):
        pair = TrainingPair(noisy=np.full((2, 2), 0.75), clean=np.full((2, 2), 0.5))
        assert np.allclose(pair.residual, 0.25)
