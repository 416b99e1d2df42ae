"""Unit tests for the scale-binned imaging operator and its adjoint.

Key invariants: kernels are exactly symmetric with calibrated total mass,
the forward map is linear, the adjoint satisfies the weighted inner-product
identity to near machine precision, and the FFT and direct convolution
paths agree.
"""

import numpy as np
import pytest

from invdiff import (
    KernelBank,
    Observation,
    PsdrTensor,
    SigmaGrid,
    adjoint,
    build_kernel_bank,
    forward,
    kernel_radius,
    op_norm_estimate,
    weighted_residual_norm_sq,
)

GRID = SigmaGrid(boundaries=(0.0, 2.0, 5.0, 10.0), support_set=(1, 2, 3))


@pytest.fixture(scope="module")
def bank():
    return build_kernel_bank(GRID, psf_sigma=0.0, quad_order=16)


class TestSigmaGrid:
    def test_basic_properties(self):
        g = SigmaGrid(boundaries=(0.0, 2.0, 5.0, 10.0), support_set=(3, 1, 1))
        assert g.n_bins == 3
        np.testing.assert_allclose(g.widths, [2.0, 3.0, 5.0])
        assert g.sigma_max == 10.0
        assert g.support_set == (1, 3)  # sorted, deduplicated
        np.testing.assert_array_equal(g.support_mask, [True, False, True])

    def test_validation(self):
        with pytest.raises(ValueError, match="at least two"):
            SigmaGrid(boundaries=(0.0,), support_set=(1,))
        with pytest.raises(ValueError, match="finite"):
            SigmaGrid(boundaries=(0.0, np.inf), support_set=(1,))
        with pytest.raises(ValueError, match="first boundary"):
            SigmaGrid(boundaries=(1.0, 2.0), support_set=(1,))
        with pytest.raises(ValueError, match="strictly increasing"):
            SigmaGrid(boundaries=(0.0, 2.0, 2.0), support_set=(1,))
        with pytest.raises(ValueError, match="not be empty"):
            SigmaGrid(boundaries=(0.0, 2.0), support_set=())
        with pytest.raises(ValueError, match="lie in"):
            SigmaGrid(boundaries=(0.0, 2.0), support_set=(2,))


class TestPsdrTensor:
    def test_validation(self):
        PsdrTensor(data=np.zeros((2, 3, 4)))
        with pytest.raises(ValueError, match="M x N x K"):
            PsdrTensor(data=np.zeros((2, 3)))
        with pytest.raises(ValueError, match="finite"):
            PsdrTensor(data=np.full((2, 2, 1), np.nan))
        with pytest.raises(ValueError, match="non-negative"):
            PsdrTensor(data=np.full((2, 2, 1), -1.0))


class TestObservation:
    def test_plain_constructor(self):
        d = np.arange(6.0).reshape(2, 3)
        obs = Observation.plain(d)
        np.testing.assert_array_equal(obs.weights, 1.0)
        np.testing.assert_array_equal(obs.mask, 1.0)

    def test_validation(self):
        d = np.ones((3, 3))
        with pytest.raises(ValueError, match="2D"):
            Observation(data=np.ones(3), weights=np.ones(3), mask=np.ones(3))
        with pytest.raises(ValueError, match="match the data shape"):
            Observation(data=d, weights=np.ones((2, 3)), mask=np.ones((3, 3)))
        with pytest.raises(ValueError, match="finite"):
            Observation(data=d * np.inf, weights=np.ones((3, 3)), mask=np.ones((3, 3)))
        with pytest.raises(ValueError, match="non-negative"):
            Observation(data=d, weights=-np.ones((3, 3)), mask=np.ones((3, 3)))
        with pytest.raises(ValueError, match="one weight"):
            Observation(data=d, weights=np.zeros((3, 3)), mask=np.ones((3, 3)))
        with pytest.raises(ValueError, match="binary"):
            Observation(data=d, weights=np.ones((3, 3)), mask=np.full((3, 3), 0.5))


class TestKernelBank:
    def test_radius_formula(self):
        assert kernel_radius(2.0, 0.0) == 14
        assert kernel_radius(2.0, 1.0) == 20
        assert kernel_radius(0.0, 0.0) == 2

    def test_kernel_shapes_and_sign(self, bank):
        for k, r in zip(bank.kernels, bank.radii):
            assert k.shape == (2 * r + 1, 2 * r + 1)
            assert (k >= 0).all()

    def test_kernels_exactly_symmetric(self, bank):
        for k in bank.kernels:
            np.testing.assert_array_equal(k, k.T)
            np.testing.assert_array_equal(k, k[::-1, :])
            np.testing.assert_array_equal(k, k[:, ::-1])

    def test_kernel_mass_is_sqrt_bin_width(self, bank):
        for k, w in zip(bank.kernels, GRID.widths):
            assert abs(k.sum() - np.sqrt(w)) <= 1e-6

    def test_quadrature_converged(self):
        b16 = build_kernel_bank(GRID, psf_sigma=0.0, quad_order=16)
        b32 = build_kernel_bank(GRID, psf_sigma=0.0, quad_order=32)
        assert np.abs(b16.kernels[0] - b32.kernels[0]).max() <= 1e-6
        for k in (1, 2):
            assert np.abs(b16.kernels[k] - b32.kernels[k]).max() <= 1e-12

    def test_psf_widens_kernels(self, bank):
        blurred = build_kernel_bank(GRID, psf_sigma=2.0, quad_order=16)
        for k in range(GRID.n_bins):
            assert blurred.radii[k] > bank.radii[k]
            assert blurred.kernels[k].max() < bank.kernels[k].max()
            # mass is preserved by the blur
            assert blurred.kernels[k].sum() == pytest.approx(
                bank.kernels[k].sum(), abs=2e-6
            )

    def test_plan_cached_per_shape(self, bank):
        p1 = bank.plan((24, 24))
        p2 = bank.plan((24, 24))
        assert p1 is p2
        p3 = bank.plan((24, 32))
        assert p3 is not p1
        assert p1["ghat"].shape[0] == GRID.n_bins

    def test_validation(self):
        with pytest.raises(ValueError, match="psf_sigma"):
            build_kernel_bank(GRID, psf_sigma=-1.0)
        with pytest.raises(ValueError, match="quad_order"):
            build_kernel_bank(GRID, quad_order=0)


class TestForward:
    def test_impulse_reproduces_kernel(self, bank):
        m = n = 41
        for k in range(GRID.n_bins):
            a = np.zeros((m, n, GRID.n_bins))
            a[m // 2, n // 2, k] = 1.0
            img = forward(a, bank)
            r = bank.radii[k]
            ker = bank.kernels[k]
            lo = max(0, m // 2 - r)
            hi = min(m, m // 2 + r + 1)
            crop = img[lo:hi, lo:hi]
            kcrop = ker[
                r - (m // 2 - lo) : r + (hi - m // 2),
                r - (n // 2 - lo) : r + (hi - n // 2),
            ]
            np.testing.assert_allclose(crop, kcrop, atol=1e-12)

    def test_linear(self, bank):
        rng = np.random.default_rng(5)
        for _ in range(5):
            a = rng.random((16, 16, 3))
            b = rng.random((16, 16, 3))
            al, be = rng.uniform(0.0, 2.0, 2)  # keep the combination non-negative
            lhs = forward(al * a + be * b, bank)
            np.testing.assert_allclose(
                lhs, al * forward(a, bank) + be * forward(b, bank), atol=1e-10
            )

    def test_zero_input(self, bank):
        np.testing.assert_array_equal(forward(np.zeros((8, 8, 3)), bank), 0.0)

    def test_accepts_tensor_wrapper(self, bank):
        rng = np.random.default_rng(9)
        raw = rng.random((12, 12, 3))
        np.testing.assert_array_equal(
            forward(PsdrTensor(data=raw), bank), forward(raw, bank)
        )

    def test_fft_matches_direct(self):
        # include a wide bin so the auto path actually uses the FFT branch
        g = SigmaGrid(boundaries=(0.0, 2.0, 10.0), support_set=(1, 2))
        b = build_kernel_bank(g)
        assert max(b.radii) > 16 >= min(b.radii)
        rng = np.random.default_rng(3)
        a = rng.random((24, 28, 2))
        f_dir = forward(a, b, method="direct")
        f_fft = forward(a, b, method="fft")
        f_auto = forward(a, b, method="auto")
        np.testing.assert_allclose(f_fft, f_dir, atol=1e-10)
        np.testing.assert_allclose(f_auto, f_dir, atol=1e-10)

    def test_rejects_bad_input(self, bank):
        with pytest.raises(ValueError, match="does not match"):
            forward(np.zeros((8, 8, 2)), bank)
        with pytest.raises(ValueError, match="method"):
            forward(np.zeros((8, 8, 3)), bank, method="magic")


class TestAdjoint:
    def test_inner_product_identity(self, bank):
        # <A a, d>_w == <a, A* d> for tensors supported on the mask
        rng = np.random.default_rng(0)
        m = n = 24
        worst = 0.0
        for _ in range(10):
            w = rng.uniform(0.1, 2.0, (m, n))
            mask = (rng.random((m, n)) > 0.2).astype(float)
            obs = Observation(data=rng.random((m, n)), weights=w, mask=mask)
            a = rng.random((m, n, GRID.n_bins)) * mask[:, :, None]
            d = rng.standard_normal((m, n))
            lhs = float(np.sum(w * w * forward(a, bank) * d))
            rhs = float(np.sum(a * adjoint(d, obs, bank)))
            worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(a) * np.linalg.norm(d)))
        assert worst <= 1e-12

    def test_masked_rows_are_zeroed(self, bank):
        m = n = 16
        mask = np.ones((m, n))
        mask[3:7, 2:9] = 0.0
        obs = Observation(data=np.ones((m, n)), weights=np.ones((m, n)), mask=mask)
        out = adjoint(np.ones((m, n)), obs, bank)
        assert np.abs(out[3:7, 2:9, :]).max() == 0.0
        assert out[0, 0, :].min() > 0.0

    def test_fft_matches_direct(self):
        g = SigmaGrid(boundaries=(0.0, 2.0, 10.0), support_set=(1, 2))
        b = build_kernel_bank(g)
        rng = np.random.default_rng(4)
        obs = Observation(
            data=rng.random((24, 28)),
            weights=rng.uniform(0.5, 1.5, (24, 28)),
            mask=np.ones((24, 28)),
        )
        d = rng.standard_normal((24, 28))
        np.testing.assert_allclose(
            adjoint(d, obs, b, method="fft"),
            adjoint(d, obs, b, method="direct"),
            atol=1e-10,
        )

    def test_rejects_shape_mismatch(self, bank):
        obs = Observation.plain(np.ones((8, 8)))
        with pytest.raises(ValueError, match="!= observation"):
            adjoint(np.ones((8, 9)), obs, bank)


class TestWeightedResidual:
    def test_matches_manual_formula(self, bank):
        rng = np.random.default_rng(11)
        m = n = 16
        a = rng.random((m, n, GRID.n_bins))
        obs = Observation(
            data=rng.random((m, n)),
            weights=rng.uniform(0.0, 2.0, (m, n)),
            mask=np.ones((m, n)),
        )
        want = float(np.sum((obs.weights * (forward(a, bank) - obs.data)) ** 2))
        assert weighted_residual_norm_sq(a, obs, bank) == pytest.approx(want, rel=1e-14)


class TestOpNormEstimate:
    def test_bounded_by_mass_and_weight(self, bank):
        # the spectral norm never exceeds sqrt(top scale boundary) times the
        # largest weight (kernel masses sum the bin widths telescopically)
        rng = np.random.default_rng(21)
        for _ in range(3):
            w = rng.uniform(0.0, 3.0, (20, 20))
            w[0, 0] = 3.0
            obs = Observation(data=np.zeros((20, 20)), weights=w, mask=np.ones((20, 20)))
            est = op_norm_estimate(obs, bank, iters=40)
            assert 0.0 < est <= np.sqrt(GRID.sigma_max) * w.max() + 1e-9

    def test_estimate_grows_with_iterations(self, bank):
        obs = Observation(
            data=np.zeros((20, 20)),
            weights=np.random.default_rng(2).uniform(0.5, 1.5, (20, 20)),
            mask=np.ones((20, 20)),
        )
        e20 = op_norm_estimate(obs, bank, iters=20)
        e60 = op_norm_estimate(obs, bank, iters=60)
        assert e60 >= e20 - 1e-9

    def test_zero_mask_gives_zero(self, bank):
        obs = Observation(
            data=np.zeros((12, 12)), weights=np.ones((12, 12)), mask=np.zeros((12, 12))
        )
        assert op_norm_estimate(obs, bank, iters=25) == 0.0

    def test_rejects_few_iterations(self, bank):
        obs = Observation.plain(np.zeros((8, 8)))
        with pytest.raises(ValueError, match="iters"):
            op_norm_estimate(obs, bank, iters=5)
