"""
Free-space Helmholtz Green's function e^{ikr}/(4 pi r) applied on a grid.

Convolution uses the truncated-kernel construction: the kernel is cut off at
a radius R larger than the box diameter, its Fourier transform is known in
closed form, and a band-limited copy of it is tabulated once per wave number
on a doubly padded grid.  Each application then costs two FFTs on the padded
grid and is spectrally accurate for smooth sources supported in the box.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .grid import Grid3, fftn, ifftn

# integral of 1/|u| over the unit cube [-1/2, 1/2]^3
UNIT_CUBE_INV_R = 3.0 * np.log(2.0 + np.sqrt(3.0)) - np.pi / 2.0


def green_kernel(q: float, r, sign: str = "-"):
    """e^{-/+ i q r} / (4 pi r) for r > 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("free resolvent kernel is singular at r = 0")
    s = _phase_sign(sign)
    return np.exp(1j * s * q * r) / (4.0 * np.pi * r)


def _phase_sign(sign: str) -> int:
    if sign == "-":
        return -1
    if sign == "+":
        return 1
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def cell_average_inv_r(h: float) -> float:
    """Mean of 1/|k| over the cube of side h centred at k = 0."""
    return UNIT_CUBE_INV_R / h


def truncated_kernel_ft(s: np.ndarray, k: float, R: float) -> np.ndarray:
    """Fourier transform of e^{ikr}/(4 pi r) restricted to r <= R.

    ``k`` is the signed wave number (k = -q for the minus boundary value).
    """
    s = np.asarray(s, dtype=float)
    sinc_sR = R * np.sinc(s * R / np.pi)  # sin(sR)/s
    cos_sR = np.cos(s * R)
    if k == 0.0:
        # 2 sin^2(sR/2)/s^2
        return (0.5 * R * R) * np.sinc(s * R / (2.0 * np.pi)) ** 2 + 0j
    phase = np.exp(1j * k * R)
    den = s * s - k * k
    near = np.abs(s - abs(k)) < 1e-3 * max(1.0, abs(k))
    safe = np.where(near, 1.0, den)
    out = (1.0 - phase * (cos_sR - 1j * k * sinc_sR)) / safe
    if np.any(near):
        out[near] = _direct_ft(s[near], k, R)
    return out


def _direct_ft(s: np.ndarray, k: float, R: float) -> np.ndarray:
    # int_0^R sin(s r)/s e^{ikr} dr by Gauss-Legendre
    m = int(64 + 2 * R * (np.max(s) + abs(k)))
    x, w = np.polynomial.legendre.leggauss(m)
    r = 0.5 * R * (x + 1.0)
    w = 0.5 * R * w
    # sin(s r)/s written as r sinc to stay finite at s = 0
    return (r * np.sinc(np.outer(s, r) / np.pi) * np.exp(1j * k * r)) @ w


class FreeGreen:
    """Precomputed truncated-kernel spectrum for one (grid, q, sign)."""

    def __init__(self, grid: Grid3, q: float, sign: str = "-"):
        if q < 0:
            raise ValueError("q must be nonnegative")
        self.grid = grid
        self.q = float(q)
        self.sign = sign
        k = _phase_sign(sign) * self.q
        n, h = grid.n, grid.h
        R = 2.0 * np.sqrt(3.0) * grid.L + 2 * h
        # tabulate the band-limited truncated kernel on a 4x box (no aliasing)
        N4 = 4 * n
        kax = 2.0 * np.pi * np.fft.fftfreq(N4, d=h)
        s = np.sqrt(kax[:, None, None] ** 2 + kax[None, :, None] ** 2 + kax[None, None, :] ** 2)
        ghat = truncated_kernel_ft(s, k, R)
        del s
        # kernel samples K(m h) with h^3 sum_m K f ~ int G f
        kern = ifftn(ghat) / h ** 3
        del ghat
        idx = np.r_[0:n, N4 - n:N4]
        small = kern[np.ix_(idx, idx, idx)]
        del kern
        self.spectrum = fftn(small) * h ** 3
        self.padded_n = 2 * n

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Aperiodic convolution of f (shape (..., n, n, n)) with the kernel."""
        n = self.grid.n
        pad = np.zeros(f.shape[:-3] + (2 * n,) * 3, dtype=complex)
        pad[..., :n, :n, :n] = f
        out = ifftn(fftn(pad) * self.spectrum)
        return out[..., :n, :n, :n]


@lru_cache(maxsize=160)
def free_green(grid: Grid3, q: float, sign: str = "-") -> FreeGreen:
    return FreeGreen(grid, q, sign)
