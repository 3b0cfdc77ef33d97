import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavekg.grid import (
    GridError,
    dealias,
    gradient,
    integrate,
    laplacian,
    make_grid,
    spectral_derivative,
    spectral_l2_squared,
)


class TestMakeGrid:
    def test_spacing_and_fundamental(self):
        g = make_grid(8, 4.0)
        assert g.h == 1.0
        assert g.h * g.n == 2 * g.L
        assert g.k_fundamental == pytest.approx(np.pi / 4)
        npt.assert_allclose(g.x, np.arange(-4.0, 4.0))

    def test_dealias_mask_keeps_modes_up_to_two(self):
        g = make_grid(8, 4.0)
        m1 = np.rint(g.k1[:, 0] / g.k_fundamental).astype(int)
        kept = sorted(set(m1[g.dealias_mask[:, 0]]))
        assert kept == [-2, -1, 0, 1, 2]
        m2 = np.rint(g.k2[0] / g.k_fundamental).astype(int)
        assert list(m2[g.dealias_mask[0]]) == [0, 1, 2]

    @pytest.mark.parametrize("n, L", [(7, 4.0), (6, 4.0), (8, 0.0), (8, -1.0), (9.5, 2.0)])
    def test_rejects_bad_parameters(self, n, L):
        with pytest.raises(GridError):
            make_grid(n, L)

    def test_tables_are_read_only(self):
        g = make_grid(16, 2.0)
        with pytest.raises(ValueError):
            g.x1[0, 0] = 1.0

    def test_radius_table(self):
        g = make_grid(16, 2.0)
        npt.assert_allclose(g.r, np.sqrt(g.x1**2 + g.x2**2))


class TestDerivatives:
    def test_sine_mode_derivative(self):
        g = make_grid(32, 3.0)
        k = np.pi / g.L
        f = np.sin(k * g.x1)
        assert np.max(np.abs(spectral_derivative(g, f, 1) - k * np.cos(k * g.x1))) < 1e-12
        assert np.max(np.abs(spectral_derivative(g, f, 2))) < 1e-12

    def test_constant_has_zero_derivative(self):
        g = make_grid(16, 2.0)
        f = np.full(g.shape, 3.5)
        for axis in (1, 2):
            assert np.max(np.abs(spectral_derivative(g, f, axis))) < 1e-14
        assert np.max(np.abs(laplacian(g, f))) < 1e-13

    def test_gaussian_against_central_differences(self):
        gaps = []
        for n in (256, 512):
            g = make_grid(n, 16.0)
            f = np.exp(-(g.r**2))
            fd = (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2 * g.h)
            d1 = spectral_derivative(g, f, 1)
            assert np.max(np.abs(d1 + 2 * g.x1 * f)) < 1e-12
            gaps.append(np.max(np.abs(d1 - fd)))
        # the gap is the stencil's own error, so it shrinks like h^2
        assert gaps[0] / gaps[1] == pytest.approx(4.0, rel=0.02)

    def test_laplacian_sine_and_stencil(self):
        g = make_grid(64, 4.0)
        k = 3 * np.pi / g.L
        f = np.sin(k * g.x1)
        npt.assert_allclose(laplacian(g, f), -k**2 * f, atol=1e-10)
        gaps = []
        for n in (256, 512):
            g = make_grid(n, 16.0)
            f = np.exp(-(g.r**2))
            sten = (np.roll(f, 1, 0) + np.roll(f, -1, 0) + np.roll(f, 1, 1) + np.roll(f, -1, 1) - 4 * f) / g.h**2
            gaps.append(np.max(np.abs(laplacian(g, f) - sten)))
        assert gaps[0] / gaps[1] == pytest.approx(4.0, rel=0.02)

    def test_mixed_partials_commute(self, rng):
        g = make_grid(32, 2.0)
        f = dealias(g, rng.standard_normal(g.shape))
        a = spectral_derivative(g, spectral_derivative(g, f, 1), 2)
        b = spectral_derivative(g, spectral_derivative(g, f, 2), 1)
        assert np.max(np.abs(a - b)) < 1e-11

    def test_gradient_matches_single_axis(self, rng):
        g = make_grid(16, 1.0)
        f = rng.standard_normal(g.shape)
        d1, d2 = gradient(g, f)
        npt.assert_array_equal(d1, spectral_derivative(g, f, 1))
        npt.assert_array_equal(d2, spectral_derivative(g, f, 2))

    def test_output_is_real(self, rng):
        g = make_grid(16, 1.0)
        out = spectral_derivative(g, rng.standard_normal(g.shape), 1)
        assert out.dtype == np.float64

    def test_shape_mismatch_and_bad_axis(self):
        g = make_grid(16, 1.0)
        with pytest.raises(GridError):
            spectral_derivative(g, np.zeros((8, 8)), 1)
        with pytest.raises(GridError):
            spectral_derivative(g, np.zeros(g.shape), 3)


class TestIntegrate:
    def test_constant_gives_area(self):
        g = make_grid(8, 4.0)
        assert integrate(g, np.ones(g.shape)) == 64.0

    def test_full_periods_vanish(self):
        g = make_grid(32, 4.0)
        assert abs(integrate(g, np.sin(np.pi / g.L * g.x1))) < 1e-13

    def test_gaussian_mass(self):
        g = make_grid(128, 16.0)
        assert abs(integrate(g, np.exp(-(g.r**2))) - np.pi) < 1e-10

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_derivative_integrates_to_zero(self, seed):
        g = make_grid(16, 3.0)
        f = np.random.default_rng(seed).standard_normal(g.shape)
        assert abs(integrate(g, spectral_derivative(g, f, 1))) < 1e-11

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_parseval(self, seed):
        g = make_grid(16, 3.0)
        f = np.random.default_rng(seed).standard_normal(g.shape)
        a = integrate(g, f**2)
        assert abs(a - spectral_l2_squared(g, f)) < 1e-10 * a


class TestDealias:
    def test_kept_and_removed_modes(self):
        g = make_grid(24, np.pi)
        inside = np.cos(3 * g.x1) * np.sin(5 * g.x2)
        npt.assert_allclose(dealias(g, inside), inside, atol=1e-13)
        outside = np.cos(10 * g.x1)
        assert np.max(np.abs(dealias(g, outside))) < 1e-13

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_idempotent(self, seed):
        g = make_grid(16, 2.0)
        f = np.random.default_rng(seed).standard_normal(g.shape)
        once = dealias(g, f)
        npt.assert_allclose(dealias(g, once), once, atol=1e-13)
