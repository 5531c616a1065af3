import numpy as np
import pytest
from scipy.integrate import quad

from waveop_lab.greens import (UNIT_CUBE_INV_R, cell_average_inv_r, free_green, green_kernel,
                               truncated_kernel_ft)
from waveop_lab.grid import make_grid


def radial_helmholtz(r, q):
    """Outgoing-minus convolution of e^{-|y|^2/2} with e^{-iq|x-y|}/(4 pi |x-y|) at |x| = r."""

    def shell(s, part):
        v = s * np.exp(-s * s / 2) * (np.exp(-1j * q * abs(r - s)) - np.exp(-1j * q * (r + s)))
        return getattr(v / (2j * q * r), part)

    return complex(quad(shell, 0, 12, args=("real",), epsabs=1e-13, limit=200)[0],
                   quad(shell, 0, 12, args=("imag",), epsabs=1e-13, limit=200)[0])


@pytest.fixture(scope="module")
def grid():
    return make_grid(32, 8.0)


class TestKernel:
    def test_values(self):
        assert green_kernel(1.0, 1.0) == pytest.approx(np.exp(-1j) / (4 * np.pi))
        assert green_kernel(1.0, 1.0, "+") == pytest.approx(np.exp(1j) / (4 * np.pi))

    def test_rejects_origin_and_bad_sign(self):
        with pytest.raises(ValueError):
            green_kernel(1.0, 0.0)
        with pytest.raises(ValueError):
            green_kernel(1.0, 1.0, "0")

    def test_cell_average(self):
        # independent nquad over the cube: 2.380077363979553
        assert UNIT_CUBE_INV_R == pytest.approx(2.380077363979553, rel=1e-12)
        assert cell_average_inv_r(0.5) == pytest.approx(2 * UNIT_CUBE_INV_R)

    def test_truncated_transform_near_resonance_is_continuous(self):
        # the closed form switches to direct quadrature near |s| = q
        s = np.array([0.999, 0.9995, 1.0, 1.0005, 1.001, 0.0])
        v = truncated_kernel_ft(s, -1.0, 10.0)
        assert np.all(np.isfinite(v))
        assert abs(v[1] - v[0]) < 0.05 * abs(v[0])


class TestFreeGreen:
    def test_newton_potential_of_gaussian(self, grid):
        # int e^{-|y|^2/2} / (4 pi |y|) dy = 1
        f = np.exp(-grid.r ** 2 / 2)
        u = free_green(grid, 0.0).apply(f)
        assert u[grid.index_of((0, 0, 0))] == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("r", [0.5, 1.0, 2.0, 3.0])
    def test_helmholtz_against_radial_quadrature(self, grid, r):
        q = 1.0
        f = np.exp(-grid.r ** 2 / 2)
        u = free_green(grid, q, "-").apply(f)
        assert u[grid.index_of((r, 0, 0))] == pytest.approx(radial_helmholtz(r, q), abs=1e-9)

    def test_plus_is_conjugate_of_minus(self, grid):
        rng = np.random.default_rng(3)
        f = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
        f *= np.exp(-grid.r ** 2 / 4)
        um = free_green(grid, 0.7, "-").apply(np.conj(f))
        up = free_green(grid, 0.7, "+").apply(f)
        assert np.allclose(up, np.conj(um), atol=1e-12)

    def test_batched_apply(self, grid):
        g = free_green(grid, 0.3)
        f = np.stack([np.exp(-grid.r ** 2 / 2), np.exp(-grid.r ** 2)])
        out = g.apply(f)
        assert np.allclose(out[1], g.apply(f[1]))

    def test_cache_and_validation(self, grid):
        assert free_green(grid, 0.5) is free_green(grid, 0.5)
        with pytest.raises(ValueError):
            free_green(grid, -1.0)
