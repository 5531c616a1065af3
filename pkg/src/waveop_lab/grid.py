"""
Periodic 3-D grids, complex fields, the smooth low-pass cutoff and L^p norms.

The box [-L, L)^3 is sampled with n points per axis.  Fields are treated as
periodic on the box; "free space" behaviour is obtained by keeping sources
small near the boundary (see ``boundary_fraction``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

FFT_WORKERS = -1


def fftn(a: np.ndarray) -> np.ndarray:
    return sfft.fftn(a, axes=(-3, -2, -1), workers=FFT_WORKERS)


def ifftn(a: np.ndarray) -> np.ndarray:
    return sfft.ifftn(a, axes=(-3, -2, -1), workers=FFT_WORKERS)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid3:
    """Uniform periodic grid on [-L, L)^3 with its discrete Fourier dual.

    Attributes
    ----------
    n : int
        Points per axis, a power of two in [8, 256].
    L : float
        Half-width of the box.
    """

    n: int
    L: float

    def __post_init__(self):
        # padded work grids may use any even size; make_grid enforces powers of two
        if not isinstance(self.n, (int, np.integer)) or self.n < 8 or self.n % 2:
            raise ValueError(f"n must be an even integer >= 8, got {self.n!r}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L!r}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.h ** 3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def nyquist(self) -> float:
        return np.pi / self.h

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    @cached_property
    def k_axis(self) -> np.ndarray:
        # FFT ordering; values (pi/L) * {-n/2, ..., n/2-1}
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.axis, self.axis, self.axis, indexing="ij"))

    @cached_property
    def r(self) -> np.ndarray:
        x, y, z = self.coords
        return np.sqrt(x * x + y * y + z * z)

    @cached_property
    def kvec(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = self.k_axis
        return tuple(np.meshgrid(k, k, k, indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky, kz = self.kvec
        return kx * kx + ky * ky + kz * kz

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.k2)

    def japanese(self) -> np.ndarray:
        """<x> = sqrt(|x|^2 + 1) on the grid."""
        return np.sqrt(self.r ** 2 + 1.0)

    def forward(self, values: np.ndarray) -> np.ndarray:
        """Fourier coefficients c_k with values = sum_k c_k exp(i k.x)."""
        # grid starts at -L, so shift the phase to make coefficients refer to x
        return fftn(values) * self._phase.conj() / self.n ** 3

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        return ifftn(coeffs * self._phase) * self.n ** 3

    @cached_property
    def _phase(self) -> np.ndarray:
        # exp(-i k.L): accounts for the first sample sitting at x = -L
        p = np.exp(-1j * self.k_axis * self.L)
        return p[:, None, None] * p[None, :, None] * p[None, None, :]

    def plane_wave(self, k: np.ndarray) -> np.ndarray:
        x, y, z = self.coords
        return np.exp(1j * (k[0] * x + k[1] * y + k[2] * z))

    def refined(self, factor: int = 2) -> "Grid3":
        """Same box, ``factor`` times as many points per axis."""
        return Grid3(self.n * factor, self.L)

    def padded(self, factor: float = 2) -> "Grid3":
        """Same spacing, box enlarged by ``factor`` (rounded to an even size)."""
        m = 2 * int(round(self.n * factor / 2))
        return Grid3(m, self.L * m / self.n)

    def index_of(self, point) -> tuple[int, int, int]:
        idx = np.rint((np.asarray(point, dtype=float) + self.L) / self.h).astype(int)
        if np.any(idx < 0) or np.any(idx >= self.n):
            raise ValueError(f"point {point!r} outside the grid box")
        return tuple(int(i) for i in idx)


def make_grid(n: int, L: float) -> Grid3:
    """Grid with n (a power of two in [8, 256]) points per axis on [-L, L)^3."""
    if not isinstance(n, (int, np.integer)) or not _is_power_of_two(int(n)):
        raise ValueError(f"n must be a power of two, got {n!r}")
    if not 8 <= n <= 256:
        raise ValueError(f"n must lie in [8, 256], got {n}")
    if not L > 0:
        raise ValueError(f"L must be positive, got {L!r}")
    return Grid3(int(n), float(L))


def embed(values: np.ndarray, grid: Grid3, big: Grid3) -> np.ndarray:
    """Place a field on a larger grid of the same spacing (zero outside)."""
    if not np.isclose(grid.h, big.h):
        raise ValueError("embedding requires equal spacing")
    off = (big.n - grid.n) // 2
    out = np.zeros(values.shape[:-3] + big.shape, dtype=values.dtype)
    out[..., off:off + grid.n, off:off + grid.n, off:off + grid.n] = values
    return out


def crop(values: np.ndarray, big: Grid3, grid: Grid3) -> np.ndarray:
    off = (big.n - grid.n) // 2
    return values[..., off:off + grid.n, off:off + grid.n, off:off + grid.n]


@dataclass(frozen=True)
class ComplexField:
    """Complex samples on a grid; the value array is read-only."""

    grid: Grid3
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains NaN or Inf")
        v = v.copy() if v is self.values else v
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __add__(self, other: "ComplexField") -> "ComplexField":
        return ComplexField(self.grid, self.values + other.values)

    def __sub__(self, other: "ComplexField") -> "ComplexField":
        return ComplexField(self.grid, self.values - other.values)

    def __mul__(self, c) -> "ComplexField":
        return ComplexField(self.grid, self.values * c)

    __rmul__ = __mul__

    def vdot(self, other: "ComplexField") -> complex:
        """Grid inner product <self, other> = h^3 sum conj(self) other."""
        return complex(np.vdot(self.values, other.values) * self.grid.cell_volume)


def _sigma(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    out = np.where(s >= 1.0, 1.0, 0.0)
    inner = (s > 0.0) & (s < 1.0)
    si = s[inner]
    # e^{-1/s} / (e^{-1/s} + e^{-1/(1-s)}) written as a logistic to avoid underflow
    with np.errstate(over="ignore"):
        out[inner] = 1.0 / (1.0 + np.exp(1.0 / si - 1.0 / (1.0 - si)))
    return out


def beta(lam) -> np.ndarray:
    """Smooth step: 0 for lam < 1/2, 1 for lam >= 1, C-infinity in between."""
    lam = np.asarray(lam, dtype=float)
    return _sigma(2.0 * lam - 1.0)


@dataclass(frozen=True)
class CutoffProfile:
    """beta(t > M) = beta(t/M) and its complement beta(t <= M)."""

    M: float

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError(f"cutoff M must be positive, got {self.M!r}")

    def high(self, t) -> np.ndarray:
        return beta(np.asarray(t, dtype=float) / self.M)

    def low(self, t) -> np.ndarray:
        return 1.0 - self.high(t)


def lowpass_multiplier(grid: Grid3, cutoff: CutoffProfile) -> np.ndarray:
    if cutoff.M >= grid.nyquist:
        raise ValueError(f"cutoff M={cutoff.M} must be below the grid Nyquist {grid.nyquist:.4g}")
    return cutoff.low(grid.kabs)


def lowpass_filter(psi: ComplexField, cutoff: CutoffProfile) -> ComplexField:
    """Apply beta(|P| <= M) as a Fourier multiplier."""
    mult = lowpass_multiplier(psi.grid, cutoff)
    return ComplexField(psi.grid, ifftn(fftn(psi.values) * mult))


def _lp(values: np.ndarray, h3: float, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p!r}")
    a = np.abs(values)
    if np.isinf(p):
        return float(a.max())
    if p == 1:
        return float(a.sum() * h3)
    if p == 2:
        return float(np.sqrt(np.vdot(a, a).real * h3))
    m = a.max()
    if m == 0:
        return 0.0
    return float(m * (h3 * np.sum((a / m) ** p)) ** (1.0 / p))


def lp_norm(psi: ComplexField, p: float) -> float:
    """(h^3 sum |psi|^p)^(1/p); grid maximum for p = inf."""
    return _lp(psi.values, psi.grid.cell_volume, p)


def weighted_lp_norm(psi: ComplexField, p: float, delta: float) -> float:
    """L^p norm of <x>^delta psi."""
    return _lp(psi.values * psi.grid.japanese() ** delta, psi.grid.cell_volume, p)


def array_lp_norm(values: np.ndarray, grid: Grid3, p: float, delta: float = 0.0) -> float:
    if delta:
        values = values * grid.japanese() ** delta
    return _lp(values, grid.cell_volume, p)


def boundary_fraction(values: np.ndarray, width: int = 2) -> float:
    """Largest |value| within ``width`` cells of the box faces, relative to the peak."""
    a = np.abs(values)
    peak = a.max()
    if peak == 0:
        return 0.0
    mask = np.zeros(a.shape, dtype=bool)
    for ax in range(3):
        sl = [slice(None)] * 3
        sl[ax] = slice(0, width)
        mask[tuple(sl)] = True
        sl[ax] = slice(a.shape[ax] - width, None)
        mask[tuple(sl)] = True
    return float(a[mask].max() / peak)
