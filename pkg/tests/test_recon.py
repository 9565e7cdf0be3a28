import numpy as np
import pytest
from scipy.fft import dctn, idctn

from ghostkit.forward import ImagePlane, measure
from ghostkit.patterns import gen_hadamard_patterns, gen_random_patterns
from ghostkit.metrics import psnr
from ghostkit.recon import (
    RankDeficientAtomWarning,
    Reconstruction,
    bc_reconstruct,
    normalize_for_display,
    omp_reconstruct,
    residual_decompose,
    save_reconstruction,
    load_reconstruction,
)


def brute_force_bc(data: np.ndarray, buckets: np.ndarray) -> np.ndarray:
    """Per-pixel double loop over patterns, top-to-bottom; the order oracle."""
    m, n = data.shape
    out = np.zeros(n)
    for r in range(n):
        acc = 0.0
        for j in range(m):
            acc += float(data[j, r]) * float(buckets[j])
        out[r] = acc
    return out


def spanning_image(rng: np.random.Generator, size: int) -> ImagePlane:
    """Random test image guaranteed to span [0, 1] (min 0, max 1)."""
    px = rng.random((size, size))
    px.reshape(-1)[0] = 0.0
    px.reshape(-1)[-1] = 1.0
    return ImagePlane.from_array(px)


class TestBasicCorrelation:
    def test_signed_hadamard_plain_recovers_n_times_object(self):
        stack = gen_hadamard_patterns(4, 4, signed=True)
        obj = spanning_image(np.random.default_rng(0), 4)
        buckets = measure(stack, obj)
        recon = bc_reconstruct(stack, buckets, mode="plain")
        assert np.allclose(recon.field, 16.0 * obj.pixels, atol=1e-10)
        display = normalize_for_display(recon)
        assert np.allclose(display.pixels, obj.pixels, atol=1e-10)

    def test_single_pattern_rank_one_field(self):
        stack = gen_random_patterns(1, 1, 4, 4, "uniform")
        recon = bc_reconstruct(stack, np.array([2.5]), mode="plain")
        assert np.array_equal(recon.field.reshape(-1),
                              2.5 * stack.data[0].astype(np.float64))

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_bitwise_agreement_with_double_loop(self, seed):
        rng = np.random.default_rng(seed)
        stack = gen_random_patterns(seed, 24, 4, 4, "uniform")
        buckets = rng.random(24) * 10
        got = bc_reconstruct(stack, buckets, mode="plain")
        expected = brute_force_bc(stack.data, buckets)
        assert np.array_equal(got.field.reshape(-1), expected)

    def test_centered_invariant_to_bucket_offset(self):
        stack = gen_random_patterns(4, 32, 8, 8, "uniform")
        obj = np.random.default_rng(4).random((8, 8))
        buckets = measure(stack, obj).values
        base = bc_reconstruct(stack, buckets, mode="centered")
        shifted = bc_reconstruct(stack, buckets + 17.3, mode="centered")
        assert np.allclose(base.field, shifted.field, atol=1e-10)

    def test_length_mismatch_rejected(self):
        stack = gen_random_patterns(1, 4, 4, 4, "binary")
        with pytest.raises(ValueError):
            bc_reconstruct(stack, np.zeros(5))

    def test_unknown_mode_rejected(self):
        stack = gen_random_patterns(1, 4, 4, 4, "binary")
        with pytest.raises(ValueError):
            bc_reconstruct(stack, np.zeros(4), mode="fancy")

    def test_method_recorded(self):
        stack = gen_random_patterns(1, 4, 4, 4, "binary")
        assert bc_reconstruct(stack, np.zeros(4)).method == "bc-plain"
        assert bc_reconstruct(stack, np.zeros(4), mode="centered").method == "bc-centered"


class TestResidualDecompose:
    def test_orthonormal_stack_zero_residual(self):
        signed = gen_hadamard_patterns(8, 8, signed=True)
        orthonormal = signed.data.astype(np.float64) / 8.0  # P^T P = I exactly
        obj = spanning_image(np.random.default_rng(5), 8)
        _, residual = residual_decompose(orthonormal, obj)
        assert np.max(np.abs(residual.field)) == 0.0

    def test_zero_object_gives_zero_fields(self):
        stack = gen_random_patterns(6, 12, 4, 4, "uniform")
        g, r = residual_decompose(stack, np.zeros((4, 4)))
        assert not g.field.any()
        assert not r.field.any()

    def test_identity_holds_at_spec_scale(self):
        # random binary M=2048 stack on a 64x64 scene
        from ghostkit.datapipe import synthetic_scene
        stack = gen_random_patterns(7, 2048, 64, 64, "binary")
        obj = synthetic_scene(7, 64, 64)
        g, r = residual_decompose(stack, obj)
        assert np.max(np.abs(g.field - obj.pixels - r.field)) <= 1e-10

    def test_matches_bc_reconstruct_path(self):
        # independent route: measure + correlate, ordered loops
        stack = gen_random_patterns(8, 64, 8, 8, "uniform")
        obj = spanning_image(np.random.default_rng(8), 8)
        g, _ = residual_decompose(stack, obj)
        bc = bc_reconstruct(stack, measure(stack, obj), mode="plain")
        assert np.allclose(g.field, bc.field, atol=1e-10)

    def test_dimension_mismatch_rejected(self):
        stack = gen_random_patterns(1, 4, 4, 4, "binary")
        with pytest.raises(ValueError):
            residual_decompose(stack, ImagePlane.from_array(np.zeros((3, 3))))


def make_sparse_dct_instance(seed: int, size: int = 8, m: int = 40, k: int = 5):
    """Noiseless k-sparse-in-DCT measurement instance with a Gaussian matrix."""
    rng = np.random.default_rng(seed)
    n = size * size
    support = rng.choice(n, size=k, replace=False)
    coeffs = np.zeros(n)
    coeffs[support] = rng.uniform(0.5, 1.5, size=k) * rng.choice([-1.0, 1.0], size=k)
    p = rng.standard_normal((m, n)) / np.sqrt(m)
    image = idctn(coeffs.reshape(size, size), type=2, norm="ortho")
    buckets = p @ image.reshape(-1)
    return p, buckets, support, coeffs


class TestOMP:
    def test_single_atom_exact_recovery_in_one_iteration(self):
        # m=16 keeps the unnormalised Gaussian columns incoherent enough for
        # guaranteed one-step selection (m=8 fails on ~1 seed in 5)
        p, buckets, support, coeffs = make_sparse_dct_instance(0, size=4, m=16, k=1)
        recon, info = omp_reconstruct(p, buckets, sparsity_k=1, residual_tol=0.0,
                                      return_info=True)
        assert info.support == list(support)
        assert info.residual_norms[-1] <= 1e-10
        assert np.allclose(info.coefficients, coeffs, atol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_five_sparse_exact_recovery(self, seed):
        p, buckets, support, coeffs = make_sparse_dct_instance(seed)
        recon, info = omp_reconstruct(p, buckets, sparsity_k=5, return_info=True)
        assert sorted(info.support) == sorted(support)
        assert np.allclose(info.coefficients, coeffs, atol=1e-8)
        expected_image = idctn(coeffs.reshape(8, 8), type=2, norm="ortho")
        assert np.allclose(recon.field, expected_image, atol=1e-8)

    def test_residual_norm_non_increasing(self):
        rng = np.random.default_rng(10)
        stack = gen_random_patterns(10, 48, 8, 8, "uniform")
        buckets = measure(stack, rng.random((8, 8)))
        _, info = omp_reconstruct(stack, buckets, sparsity_k=20, residual_tol=0.0,
                                  return_info=True)
        norms = info.residual_norms
        assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))

    def test_no_atom_selected_twice(self):
        stack = gen_random_patterns(11, 48, 8, 8, "uniform")
        buckets = measure(stack, np.random.default_rng(11).random((8, 8)))
        _, info = omp_reconstruct(stack, buckets, sparsity_k=30, residual_tol=0.0,
                                  return_info=True)
        assert len(info.support) == len(set(info.support))

    def test_sparsity_zero_rejected(self):
        stack = gen_random_patterns(1, 4, 4, 4, "binary")
        with pytest.raises(ValueError):
            omp_reconstruct(stack, np.zeros(4), sparsity_k=0)

    def test_rank_deficient_atom_dropped_with_warning(self):
        # dictionary spans only 2 of 3 measurement dimensions; once both
        # directions are active, the leftover duplicate atoms can only be
        # selected through fp crumbs and must be dropped, not fitted
        c0 = np.array([1.0, 2.0, 3.0])
        c2 = np.array([0.3, -0.7, 0.2])
        p = np.column_stack([c0, c0, c2, 2 * c0])
        buckets = c0 + c2 + 0.5 * np.cross(c0, c2)
        with pytest.warns(RankDeficientAtomWarning):
            recon, info = omp_reconstruct(p, buckets, basis="identity", sparsity_k=3,
                                          residual_tol=0.0, return_info=True)
        assert info.dropped_atoms
        assert len(info.support) == len(set(info.support))
        norms = info.residual_norms
        assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))

    def test_identity_basis(self):
        rng = np.random.default_rng(12)
        n = 16
        coeffs = np.zeros(n)
        coeffs[[3, 7]] = [1.0, -0.5]
        p = rng.standard_normal((12, n))
        recon, info = omp_reconstruct(p, p @ coeffs, basis="identity", sparsity_k=2,
                                      return_info=True)
        assert sorted(info.support) == [3, 7]
        assert np.allclose(recon.field.reshape(-1), coeffs, atol=1e-10)

    def test_unknown_basis_rejected(self):
        with pytest.raises(ValueError):
            omp_reconstruct(np.ones((2, 4)), np.ones(2), basis="wavelet")


class TestNormalizeForDisplay:
    def test_affine_map(self):
        recon = Reconstruction(width=2, height=1, field=np.array([[0.0, 2.0]]),
                               method="bc-plain")
        assert np.array_equal(normalize_for_display(recon).pixels, [[0.0, 1.0]])

    def test_constant_field_maps_to_mid_gray(self):
        recon = Reconstruction(width=2, height=2, field=np.full((2, 2), 7.3),
                               method="bc-plain")
        assert np.array_equal(normalize_for_display(recon).pixels, np.full((2, 2), 0.5))

    def test_unit_range_field_is_fixed_point(self):
        rng = np.random.default_rng(13)
        field = rng.random((6, 6))
        field.reshape(-1)[0] = 0.0
        field.reshape(-1)[-1] = 1.0
        out = normalize_for_display(Reconstruction(width=6, height=6, field=field,
                                                   method="bc-plain"))
        assert np.allclose(out.pixels, field, atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            normalize_for_display(np.array([[np.nan, 1.0]]))


class TestEquationIdentityProperty:
    @pytest.mark.parametrize("seed", range(6))
    def test_bc_equals_decomposed_g(self, seed):
        rng = np.random.default_rng(100 + seed)
        size = int(rng.integers(4, 17))
        m = int(rng.integers(1, 3) * size * size)
        stack = gen_random_patterns(seed, m, size, size,
                                    "binary" if seed % 2 else "uniform")
        obj = rng.random((size, size))
        g, r = residual_decompose(stack, obj)
        assert np.max(np.abs(g.field - obj - r.field)) <= 1e-10
        bc = bc_reconstruct(stack, measure(stack, obj), mode="plain")
        assert np.allclose(bc.field, g.field, atol=1e-10)


class TestReconstructionIO:
    def test_round_trip(self, tmp_path):
        field = np.random.default_rng(14).random((5, 7)).astype(np.float32).astype(np.float64)
        recon = Reconstruction(width=7, height=5, field=field, method="cs-omp")
        path = tmp_path / "r.girc"
        save_reconstruction(path, recon)
        loaded = load_reconstruction(path)
        assert loaded.method == "cs-omp"
        assert np.array_equal(loaded.field, field)

    def test_full_sampling_hadamard_display_psnr(self):
        stack = gen_hadamard_patterns(8, 8, signed=True)
        obj = spanning_image(np.random.default_rng(15), 8)
        display = normalize_for_display(bc_reconstruct(stack, measure(stack, obj)))
        assert psnr(obj, display) >= 100.0
