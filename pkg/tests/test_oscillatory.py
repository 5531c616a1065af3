import numpy as np
import pytest
from scipy.integrate import quad

from waveop_lab.grid import CutoffProfile, make_grid
from waveop_lab.oscillatory import (MajorantParams, QuadratureError, Symbol1D, SymbolError,
                                    c_of_f, constant_symbol, derivative_bounds, eval_F_kernel,
                                    eval_I, eval_I_grid, eval_J, exponential_symbol,
                                    f_kernel_field, free_gaussian_symbol, i_bound_majorant,
                                    osi_majorant, resolvent_symbol, sinc_kernel_field,
                                    sphere_integral, sphere_quadrature)
from waveop_lab.potential import sample_potential, zero_potential
from waveop_lab.resolvent import continuous_projection


def gl_reference(f, a, b, M, weight, n=400):
    """Fixed high-order Gauss-Legendre on [0, M/2] and [M/2, M]."""
    x, w = np.polynomial.legendre.leggauss(n)
    cut = CutoffProfile(M)
    total = 0j
    for lo, hi in ((0.0, M / 2), (M / 2, M)):
        q = 0.5 * (hi - lo) * (x + 1) + lo
        total += 0.5 * (hi - lo) * np.sum(w * q * cut.low(q) * f(q) * weight(q))
    return total / (a * b)


class TestSphere:
    def test_closed_form_values(self):
        assert sphere_integral((0, 0, 0)) == pytest.approx(4 * np.pi)
        assert sphere_integral((np.pi, 0, 0)) == pytest.approx(0.0, abs=1e-14)
        assert sphere_integral((0, 3, 4)) == pytest.approx(4 * np.pi * np.sin(5) / 5)

    @pytest.mark.parametrize("r", [0.0, 0.7, 5.0, 12.3, 20.0])
    def test_quadrature_matches(self, r):
        x = r * np.array([0.48, -0.6, 0.64])
        q = sphere_quadrature(x)
        assert abs(q.imag) < 1e-12
        assert abs(q.real - sphere_integral(x)) <= 1e-8 * 4 * np.pi

    def test_batch_matches_single(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 2.0], [0.0, 0.0, 19.0]])
        batch = sphere_quadrature(pts)
        assert batch.shape == (3,)
        for p, b in zip(pts, batch):
            assert b == pytest.approx(sphere_quadrature(p), rel=1e-13, abs=1e-13)


class TestSymbols:
    def test_exponential_bounds_match_closed_form(self):
        # sup q^j e^{-q} on [0, 4] is j^j e^{-j}; j = 3 dominates
        s = exponential_symbol(2.0)
        assert s.bounds[0] == pytest.approx(1.0)
        assert s.bounds[4] == pytest.approx(27 * np.exp(-3), rel=1e-5)
        assert s.C == pytest.approx(1 + 27 * np.exp(-3), rel=1e-5)
        assert s.check()

    def test_constant(self):
        c = constant_symbol(1.0, 2.0)
        assert c.C == 2.0 and c.check()
        assert np.all(c(np.linspace(0, 2, 5)) == 2.0)

    def test_free_gaussian_against_principal_value(self):
        q = 0.5
        pv = quad(lambda s: s * s * np.exp(-s * s) / (s + q), 0, 12, weight="cauchy", wvar=q)[0]
        val = free_gaussian_symbol(2.0)(q)
        assert val.real == pytest.approx(pv, rel=1e-12)
        assert val.imag == pytest.approx(-0.5 * np.pi * q * np.exp(-q * q), rel=1e-12)

    def test_c_of_f_for_callable(self):
        assert c_of_f(lambda q: np.exp(-q) + 0j, 2.0) == pytest.approx(2.34425, rel=1e-4)
        with pytest.raises(ValueError):
            c_of_f(lambda q: q)

    def test_unstable_derivatives_are_rejected(self):
        with pytest.raises(SymbolError):
            derivative_bounds(lambda q: np.sin(40 * q) + 0j, 2.0)

    def test_symbol_validation(self):
        with pytest.raises(ValueError):
            Symbol1D(lambda q: q, 0.0, bounds=np.zeros(5))

    def test_resolvent_symbol_interpolates(self):
        g = make_grid(16, 4.0)
        V = sample_potential("gaussian", -0.5, 1.0, g)
        s = resolvent_symbol(V, 0.5, degree=12)
        assert np.isfinite(s.C) and s.C > 0
        assert s.name == "R1-gauss"


class TestRadialIntegrals:
    @pytest.mark.parametrize("a, b", [(1.0, 2.0), (0.3, 5.0), (20.0, 0.05), (0.01, 0.01)])
    def test_eval_I_against_fixed_rule(self, a, b):
        f = exponential_symbol(2.0)
        ref = gl_reference(f, a, b, 2.0, lambda q: np.sin(a * q) * np.exp(-1j * b * q))
        assert eval_I(f, a, b, 2.0) == pytest.approx(ref, abs=1e-9)

    def test_frozen_values(self):
        c = constant_symbol(2.0)
        assert eval_I(c, 1.0, 2.0, 2.0) == pytest.approx(
            -0.2332442995185226 - 0.2792441277066269j, abs=1e-10)
        e = exponential_symbol(2.0)
        assert eval_J(e, 1.5, 1.0, 2.0, 2.0) == pytest.approx(
            0.04749388432113403 + 0.17799788753010604j, abs=1e-10)

    def test_grid_matches_pointwise(self):
        f = free_gaussian_symbol(2.0)
        a = np.array([0.1, 1.0, 10.0])
        b = np.array([3.0, 0.2, 10.0])
        vals = eval_I_grid(f, a, b, 2.0)
        for i in range(3):
            assert vals[i] == pytest.approx(eval_I(f, a[i], b[i], 2.0), abs=1e-9)

    def test_validation_and_failure(self):
        f = constant_symbol(2.0)
        with pytest.raises(ValueError):
            eval_I(f, 0.0, 1.0, 2.0)
        with pytest.raises(QuadratureError):
            eval_I_grid(f, np.array([1e4]), np.array([1e4]), 2.0, tol=1e-30)


class TestMajorants:
    def test_i_bound_branches(self):
        assert i_bound_majorant(MajorantParams(0.25, 0.25), 1.0) == pytest.approx(16.0)
        assert i_bound_majorant(MajorantParams(1.0, 1.0), 2.0) == pytest.approx(2 * 0.2 * 2.0)
        with pytest.raises(ValueError):
            i_bound_majorant(MajorantParams(1.0, 1.0, variant="maineq1"), 1.0)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            MajorantParams(0.0, 1.0)
        with pytest.raises(ValueError):
            MajorantParams(1.0, 1.0, variant="maineq9")

    def test_ratio_is_bounded_on_log_grid(self):
        f = exponential_symbol(2.0)
        t = np.logspace(-2, 2, 9)
        A, B = np.meshgrid(t, t, indexing="ij")
        I = eval_I_grid(f, A, B, 2.0).reshape(A.shape)
        maj = np.array([[i_bound_majorant(MajorantParams(a, b), f.C) for b in t] for a in t])
        ratio = np.abs(I) / maj
        assert np.all(np.isfinite(ratio)) and ratio.max() < 10.0

    @pytest.mark.parametrize("variant, frozen", [
        ("maineq1", 748.0873509249502), ("maineq2", 8.679987987567332),
        ("maineq8", 75.36227888475291), ("cm1cm2", 1853.1514516299162),
        ("cm3cm4", 5.507364725038111), ("cm8", 114.447854350565)])
    def test_osi_frozen(self, variant, frozen):
        g = make_grid(16, 4.0)
        V = sample_potential("compact-bump", -1.0, 1.0, g)
        val = osi_majorant(V, (1.0, 0, 0), (-0.5, 0.5, 0), variant)
        assert val == pytest.approx(frozen, rel=1e-10)

    def test_osi_zero_and_unknown(self):
        g = make_grid(16, 4.0)
        assert osi_majorant(zero_potential(g), (0, 0, 0), (1, 0, 0)) == 0.0
        with pytest.raises(ValueError):
            osi_majorant(zero_potential(g), (0, 0, 0), (1, 0, 0), "I_ab")


@pytest.fixture(scope="module")
def deep_small():
    # deep enough that the ground state is localized on the small box
    g = make_grid(16, 4.0)
    V = sample_potential("gaussian", -8.0, 1.0, g)
    return V, continuous_projection(V)


class TestFKernel:
    def test_sinc_field(self):
        g = make_grid(16, 4.0)
        s = sinc_kernel_field(g, (0.0, 0.0, 0.0), 0.8)
        assert s[g.index_of((0, 0, 0))] == pytest.approx(0.8)
        assert s[g.index_of((1.0, 0, 0))] == pytest.approx(np.sin(0.8))

    def test_split_identity(self, deep_small):
        V, P = deep_small
        y = (0.5, 0.0, -0.5)
        ctx = {}
        F = f_kernel_field(V, y, "F", 1.0, 1, 6, P, ctx)
        F1 = f_kernel_field(V, y, "F1", 1.0, 1, 6, P, ctx)
        F2 = f_kernel_field(V, y, "F2", 1.0, 1, 6, P, ctx)
        assert P.bound.count == 1
        assert np.linalg.norm(F - F1 - F2) <= 1e-9 * np.linalg.norm(F)

    def test_zero_potential_and_validation(self):
        g = make_grid(16, 4.0)
        assert eval_F_kernel(zero_potential(g), (0, 0, 0), (1, 0, 0)) == 0
        with pytest.raises(ValueError):
            f_kernel_field(zero_potential(g), (0, 0, 0), "F3", 1.0)
