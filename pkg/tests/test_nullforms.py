import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wavekg.fields import CouplingTensors, InitialDataSpec, build_initial_state
from wavekg.grid import make_grid
from wavekg.nullforms import (
    InertIndexWarning,
    Jet,
    decomposition_residual,
    divergence_decomposition,
    nonlinearity,
    nullform_bound_ratio,
    q0,
    q0_broken,
    qab,
    rhs,
)
from wavekg.propagate import run
from wavekg.verify import DEFAULT_COUPLINGS, default_data

ONE, ZERO = np.ones(4), np.zeros(4)
T_JET = Jet(np.zeros(4), ONE, ZERO, ZERO)
X1_JET = Jet(np.zeros(4), ZERO, ONE, ZERO)
X2_JET = Jet(np.zeros(4), ZERO, ZERO, ONE)

finite = st.floats(-10, 10, allow_nan=False)


def jets():
    vec = arrays(np.float64, 5, elements=finite)
    return st.builds(Jet, vec, vec, vec, vec)


@pytest.fixture(scope="module")
def grid():
    return make_grid(64, 32.0)


def random_state(grid, couplings, seed=3):
    spec = InitialDataSpec(seed=seed, random_bumps=6, random_amplitude=0.1, random_width=2.0, random_radius=4.0)
    return build_initial_state(spec, grid, couplings)


class TestQ0:
    def test_timelike(self):
        npt.assert_array_equal(q0(T_JET, T_JET), -1.0)

    def test_orthogonal_gradients(self):
        npt.assert_array_equal(q0(X1_JET, X2_JET), 0.0)

    def test_null_plane_wave(self):
        p = Jet(ZERO, ONE, ONE, ZERO)
        npt.assert_array_equal(q0(p, p), 0.0)

    @given(jets(), jets())
    def test_symmetric(self, m, n):
        npt.assert_array_equal(q0(m, n), q0(n, m))

    def test_broken_form_keeps_time_part(self):
        npt.assert_array_equal(q0_broken(T_JET, T_JET), 1.0)
        npt.assert_array_equal(q0_broken(X1_JET, X1_JET), 0.0)


class TestQab:
    def test_q12_of_coordinates(self):
        npt.assert_array_equal(qab(1, 2, X1_JET, X2_JET), 1.0)

    def test_q01_of_t_and_x1(self):
        npt.assert_array_equal(qab(0, 1, T_JET, X1_JET), 1.0)

    @given(jets(), st.integers(0, 2), st.integers(0, 2))
    def test_vanishes_on_diagonal_of_fields(self, m, a, b):
        if a == b:
            return
        npt.assert_array_equal(qab(a, b, m, m), 0.0)

    @given(jets(), jets(), st.integers(0, 2), st.integers(0, 2))
    def test_antisymmetric(self, m, n, a, b):
        if a == b:
            return
        npt.assert_array_equal(qab(a, b, m, n), -qab(b, a, m, n))
        npt.assert_array_equal(qab(a, b, m, n), -qab(a, b, n, m))

    def test_equal_indices_warn(self):
        with pytest.warns(InertIndexWarning):
            npt.assert_array_equal(qab(1, 1, X1_JET, X2_JET), 0.0)

    def test_bad_index(self):
        with pytest.raises(IndexError):
            qab(0, 3, T_JET, X1_JET)


class TestRhs:
    def test_zero_couplings(self, grid):
        fw, fv = rhs(random_state(grid, CouplingTensors()))
        assert not fw.any() and not fv.any()

    def test_c1_only_on_time_jets(self):
        npt.assert_array_equal(nonlinearity(1.0, np.zeros((3, 3)), T_JET, T_JET), -1.0)

    @settings(max_examples=25)
    @given(jets(), jets(), arrays(np.float64, (3, 3), elements=finite), finite)
    def test_symmetric_part_inert(self, m, n, raw, C):
        sym = raw + raw.T
        npt.assert_allclose(nonlinearity(C, sym, m, n), C * q0(m, n), rtol=0, atol=1e-12 * (1 + abs(C)) * 1e3)

    def test_matches_hand_expansion(self, grid):
        s = random_state(grid, DEFAULT_COUPLINGS)
        from wavekg.grid import gradient

        w1, w2 = gradient(grid, s.w)
        v1, v2 = gradient(grid, s.v)
        c = DEFAULT_COUPLINGS
        dw = (s.wt, w1, w2)
        dv = (s.vt, v1, v2)
        expect = c.C1 * (-s.wt * s.vt + w1 * v1 + w2 * v2)
        for a in range(3):
            for b in range(3):
                expect = expect + c.C1ab[a, b] * (dw[a] * dv[b] - dv[a] * dw[b])
        fw, _ = rhs(s)
        from wavekg.grid import dealias
        npt.assert_allclose(fw, dealias(grid, expect), rtol=0, atol=1e-14)

    def test_output_is_dealiased(self, grid):
        from wavekg.grid import dealias

        fw, fv = rhs(random_state(grid, DEFAULT_COUPLINGS))
        npt.assert_allclose(dealias(grid, fw), fw, atol=1e-15)
        npt.assert_allclose(dealias(grid, fv), fv, atol=1e-15)


class TestDecomposition:
    def test_c1_zero_gives_zero(self, grid):
        c = CouplingTensors(0.0, 1.0, np.zeros((3, 3)), DEFAULT_COUPLINGS.C2ab)
        s = random_state(grid, c)
        d = divergence_decomposition(s)
        for a in d.F + d.H + (d.G,):
            assert not np.any(a)
        assert decomposition_residual(s) == 0.0

    def test_no_antisymmetric_coupling_gives_no_h(self, grid):
        c = CouplingTensors(1.0, 1.0, np.zeros((3, 3)), np.zeros((3, 3)))
        d = divergence_decomposition(build_initial_state(default_data(0.1), grid, c))
        for a in d.H:
            assert not np.any(a)
        assert any(np.any(a) for a in d.F)

    def test_zero_v_gives_zero(self, grid):
        s = random_state(grid, DEFAULT_COUPLINGS)
        s = s.with_fields(0.0, s.w, s.wt, np.zeros(grid.shape), np.zeros(grid.shape))
        d = divergence_decomposition(s)
        for a in d.F + d.H + (d.G,):
            assert not np.any(a)

    def test_zero_state(self, grid):
        assert decomposition_residual(build_initial_state(InitialDataSpec(), grid, DEFAULT_COUPLINGS)) == 0.0

    def test_evolved_state_residual(self):
        g = make_grid(128, 32.0)
        s = run(build_initial_state(default_data(), g, DEFAULT_COUPLINGS), 0.125, 1.0).final
        scale = max(np.max(np.abs(s.w)), np.max(np.abs(s.v)))
        assert decomposition_residual(s) < 1e-8 * scale

    def test_residual_converges_under_refinement(self):
        # starts on under-resolved grids, where aliasing of the products dominates
        res = []
        for n in (32, 64, 128):
            g = make_grid(n, 32.0)
            res.append(decomposition_residual(build_initial_state(default_data(0.3), g, DEFAULT_COUPLINGS)))
        assert res[1] < res[0] / 10
        assert res[2] < res[1] / 1000


class TestNullformBound:
    def test_ratio_bounded_on_evolved_state(self, coupled_run):
        ratio, excluded = nullform_bound_ratio(coupled_run[20.0])
        assert 0 < ratio <= 4.0
        assert excluded == 1
