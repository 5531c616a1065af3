"""
Oscillatory integrals in the radial momentum q and their explicit majorants.

Contents
--------
sphere_integral        int_{S^2} e^{i x.w} dsigma(w) = 4 pi sin|x| / |x|
eval_I                 I(a,b) = (1/ab) int_0^inf q beta(q <= M) f(q) sin(aq) e^{-ibq} dq
c_of_f                 sup|f| + sup_{j<=3} q^j |f^{(j+1)}| over [0, 2M]
i_bound_majorant       the (a,b) majorant of I with its two branches
osi_majorant           grid sums of the weighted kernel majorants
eval_F_kernel          the F, F1, F2 kernels of the second Born term
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

from .grid import CutoffProfile, Grid3
from .greens import cell_average_inv_r
from .potential import Potential
from .resolvent import ContinuousProjection, ResolventContext, continuous_projection

FOUR_PI = 4.0 * np.pi

# ---------------------------------------------------------------- sphere


def sphere_integral(x) -> float:
    """Surface integral of e^{i x.w} over the unit sphere (real: 4 pi sinc|x|)."""
    r = float(np.linalg.norm(np.asarray(x, dtype=float)))
    return FOUR_PI * float(np.sinc(r / np.pi))


def sphere_quadrature(x, n_theta: int = 64, n_phi: int = 64):
    """Product rule on S^2: Gauss-Legendre in cos(theta), trapezoid in phi.

    Independent of the closed form; exact for spherical polynomials of degree
    below min(2 n_theta, n_phi).  ``x`` may be one point or an (m, 3) batch.
    """
    x = np.asarray(x, dtype=float)
    c, wc = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    s = np.sqrt(1.0 - c * c)
    w = np.stack([np.outer(s, np.cos(phi)), np.outer(s, np.sin(phi)),
                  np.outer(c, np.ones(n_phi))], axis=-1)
    vals = np.exp(1j * (w.reshape(-1, 3) @ np.atleast_2d(x).T))
    out = (np.repeat(wc, n_phi) @ vals) * (2.0 * np.pi / n_phi)
    return complex(out[0]) if x.ndim == 1 else out


# ---------------------------------------------------------------- symbols

def _fd_derivative(y: np.ndarray, h: float, order: int, width: int = 9) -> np.ndarray:
    """order-th derivative of uniformly sampled y; one-sided stencils at the ends."""
    from .resolvent import fd_weights

    n = len(y)
    half = width // 2
    out = np.empty_like(y)
    cache: dict[int, np.ndarray] = {}
    for i in range(n):
        start = min(max(i - half, 0), n - width)
        shift = i - start
        w = cache.get(shift)
        if w is None:
            w = fd_weights(order, np.arange(width) - shift)
            cache[shift] = w
        out[i] = w @ y[start:start + width]
    return out / h ** order


def _bounds_on(f: Callable, M: float, n: int) -> np.ndarray:
    q = np.linspace(0.0, 2.0 * M, n + 1)
    y = np.asarray(f(q), dtype=complex)
    h = q[1] - q[0]
    out = [np.abs(y).max()]
    for j in range(4):
        d = _fd_derivative(y, h, j + 1)
        out.append(float((q ** j * np.abs(d)).max()))
    return np.array(out)


class SymbolError(ValueError):
    pass


@dataclass(frozen=True)
class Symbol1D:
    """Scalar symbol f(q) on [0, 2M] with recorded derivative bounds.

    ``bounds`` holds sup|f| followed by sup q^j |f^(j+1)| for j = 0..3.
    """

    f: Callable = field(repr=False)
    M: float
    name: str = "symbol"
    bounds: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("M must be positive")
        if self.bounds is None:
            object.__setattr__(self, "bounds", derivative_bounds(self.f, self.M))

    def __call__(self, q):
        return self.f(q)

    @property
    def C(self) -> float:
        return float(self.bounds[0] + self.bounds[1:].max())

    def check(self, samples: int = 64, slack: float = 0.05) -> bool:
        """Recorded bounds dominate fresh estimates at ``samples`` points."""
        est = _bounds_on(self.f, self.M, samples)
        noise = 1e-4 * max(est.max(), 1e-300)
        return bool(np.all(est <= self.bounds * (1.0 + slack) + noise))


def derivative_bounds(f: Callable, M: float, n: int = 64, rtol: float = 0.10,
                      floor: float = 1e-4) -> np.ndarray:
    """Finite-difference sup bounds with a refinement stability check.

    Estimates below ``floor`` times the largest bound are roundoff and are
    reported as zero.
    """
    coarse = _bounds_on(f, M, n)
    fine = _bounds_on(f, M, 2 * n)
    noise = floor * max(np.abs(fine).max(), 1e-300)
    coarse[coarse < noise] = 0.0
    fine[fine < noise] = 0.0
    diff = np.abs(fine - coarse)
    if np.any((diff > rtol * fine) & (diff > noise)):
        raise SymbolError(f"derivative estimate unstable under refinement: {coarse} vs {fine}")
    return fine


def c_of_f(f: Symbol1D | Callable, M: float | None = None) -> float:
    """sup_{[0,2M]} |f| + sup_{q in [0,2M], j=0..3} q^j |f^(j+1)(q)|."""
    if isinstance(f, Symbol1D):
        if M is None or np.isclose(M, f.M):
            return f.C
        f = f.f
    if M is None:
        raise ValueError("M is required for a bare callable")
    b = derivative_bounds(f, M)
    return float(b[0] + b[1:].max())


def constant_symbol(M: float, value: complex = 1.0) -> Symbol1D:
    return Symbol1D(lambda q: np.full(np.shape(q), value, dtype=complex), M, f"const({value})",
                    bounds=np.array([abs(value), 0.0, 0.0, 0.0, 0.0]))


def exponential_symbol(M: float, rate: float = 1.0) -> Symbol1D:
    return Symbol1D(lambda q: np.exp(-rate * np.asarray(q, dtype=float)) + 0j, M, f"exp(-{rate}q)")


def free_gaussian_symbol(M: float, sigma: float = 1.0) -> Symbol1D:
    """int_0^inf s^2 e^{-sigma^2 s^2} / (s^2 - q^2 + i0) ds in closed form.

    This is the radial part of <g, R_0^-(q^2) g> for a Gaussian g.
    """
    def f(q):
        q = np.asarray(q, dtype=float)
        return (np.sqrt(np.pi) / (2 * sigma) - np.sqrt(np.pi) * q * special.dawsn(sigma * q)
                - 0.5j * np.pi * q * np.exp(-(sigma * q) ** 2))

    return Symbol1D(f, M, f"free-gauss({sigma})")


def resolvent_symbol(V: Potential, M: float, degree: int = 64, width: float = 1.0,
                     projection: ContinuousProjection | None = None) -> Symbol1D:
    """f(q) = <g, R_1(q^2) g> for a Gaussian g, Chebyshev-interpolated on [0, 2M]."""
    g = V.grid
    src = np.exp(-g.r ** 2 / (2 * width * width)) + 0j
    P = projection if projection is not None else continuous_projection(V)
    h3 = g.cell_volume

    def sample(qs):
        out = []
        for q in np.atleast_1d(qs):
            ctx = ResolventContext(V, float(abs(q)), "-", P)
            out.append(np.vdot(src, ctx.apply_R1(src)) * h3)
        return np.array(out)

    qn = M * (np.polynomial.chebyshev.chebpts1(degree + 1) + 1.0)
    data = sample(qn)
    re = np.polynomial.Chebyshev.fit(qn, data.real, degree, domain=[0, 2 * M])
    im = np.polynomial.Chebyshev.fit(qn, data.imag, degree, domain=[0, 2 * M])

    def f(q):
        q = np.asarray(q, dtype=float)
        return re(q) + 1j * im(q)

    return Symbol1D(f, M, "R1-gauss")


# ---------------------------------------------------------------- I(a,b)

class QuadratureError(RuntimeError):
    pass


def _integrate(fun: Callable, lo: float, hi: float, epsabs: float, limit: int,
               points=None) -> complex:
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fun, lo, hi, epsabs=epsabs, epsrel=0.0, limit=limit,
                                      points=points, complex_func=True)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(str(exc)) from exc
    return complex(val)


def eval_I(f: Symbol1D, a: float, b: float, M: float, resolution: int = 1,
           tol: float = 1e-10) -> complex:
    """(1/ab) int_0^M q beta(q <= M) f(q) sin(aq) e^{-ibq} dq by adaptive Gauss-Kronrod.

    ``resolution`` tightens the absolute tolerance 16-fold per step and
    doubles the subdivision budget.
    """
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    return complex(eval_I_grid(f, np.array([a]), np.array([b]), M, resolution, tol)[0])


def eval_I_grid(f: Symbol1D, a: np.ndarray, b: np.ndarray, M: float, resolution: int = 1,
                tol: float = 1e-10) -> np.ndarray:
    """eval_I over paired arrays a, b with one shared adaptive q-partition.

    The tolerance 1e-10 (1 + C(f)) / 16^(resolution-1) holds for every entry.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("a and b must be positive")
    cut = CutoffProfile(M)
    C = f.C if isinstance(f, Symbol1D) else 0.0
    epsabs = tol * (1.0 + C) / 16.0 ** (resolution - 1)
    ab = a * b

    def g(q):
        w = q * float(cut.low(q)) * complex(f(q))
        v = w * np.sin(a * q) * np.exp(-1j * b * q) / ab
        return np.concatenate([v.real, v.imag])

    val, err, info = integrate.quad_vec(g, 0.0, M, epsabs=epsabs, epsrel=0.0, norm="max",
                                        limit=400 * 2 ** (resolution - 1), points=[0.5 * M],
                                        full_output=True)
    if not info.success:
        raise QuadratureError(f"I(a,b) quadrature did not converge: {info.message}")
    n = len(a)
    return val[:n] + 1j * val[n:]


def eval_J(f: Symbol1D, s: float, a: float, b: float, M: float, tol: float = 1e-12) -> complex:
    """(1/ab) int_0^M q beta(q <= M) f(q) e^{isq} dq."""
    cut = CutoffProfile(M)

    def g(q):
        return q * float(cut.low(q)) * complex(f(q)) * np.exp(1j * s * q)

    return _integrate(g, 0.0, M, tol * a * b, 400, points=[0.5 * M]) / (a * b)


# ---------------------------------------------------------------- majorants

MAJORANT_VARIANTS = ("I_ab", "maineq1", "maineq2", "maineq8", "cm1cm2", "cm3cm4", "cm8")


@dataclass(frozen=True)
class MajorantParams:
    a: float
    b: float
    M: float = 2.0
    variant: str = "I_ab"

    def __post_init__(self):
        if self.variant not in MAJORANT_VARIANTS:
            raise ValueError(f"unknown majorant variant {self.variant!r}")
        if self.variant == "I_ab" and not (self.a > 0 and self.b > 0):
            raise ValueError("I_ab majorant needs a, b > 0")
        if self.a < 0 or self.b < 0:
            raise ValueError("a, b must be nonnegative")


def _jp(t):
    return np.sqrt(1.0 + np.asarray(t, dtype=float) ** 2)


def i_bound_majorant(p: MajorantParams, C_f: float) -> float:
    """chi(a+b>=1)/<a+b>^2 * 1/<a-b>^2 * (1+1/b) + chi(a+b<1)/(ab), times C_f."""
    if p.variant != "I_ab":
        raise ValueError("i_bound_majorant evaluates the I_ab variant only")
    a, b = p.a, p.b
    if a + b >= 1.0:
        val = (1.0 / _jp(a + b) ** 2) * (1.0 / _jp(a - b) ** 2) * (1.0 + 1.0 / b)
    else:
        val = 1.0 / (a * b)
    return float(val * C_f)


def _inv(d: np.ndarray, h: float) -> np.ndarray:
    """1/d with the d = 0 cell replaced by its mean."""
    out = np.empty_like(d)
    zero = d < 1e-9 * h
    out[~zero] = 1.0 / d[~zero]
    out[zero] = cell_average_inv_r(h)
    return out


class _Support:
    """Grid points carrying a weight above a relative cutoff."""

    def __init__(self, grid: Grid3, weight: np.ndarray, rel_cut: float):
        w = np.abs(weight).ravel()
        keep = w > rel_cut * w.max() if w.max() > 0 else np.zeros(w.shape, dtype=bool)
        self.pts = np.stack([c.ravel()[keep] for c in grid.coords], axis=1)
        self.w = w[keep] * grid.cell_volume


def _pair_sum(U: _Support, Z: _Support, kernel: Callable, chunk: int = 2048) -> float:
    total = 0.0
    for i in range(0, len(U.w), chunk):
        u = U.pts[i:i + chunk]
        total += float(U.w[i:i + chunk] @ kernel(u[:, None, :], Z.pts[None, :, :]) @ Z.w)
    return total


def osi_majorant(V: Potential, x, y, variant: str = "maineq1", delta: float | None = None,
                 rel_cut: float = 1e-6) -> float:
    """Right-hand side of the weighted kernel majorants at (x, y) by grid sums.

    Singular factors 1/|k|, 1/|z-y|, 1/|p| use the cell mean on their zero cell.
    Points where the weight is below ``rel_cut`` times its maximum are skipped.
    """
    if variant not in MAJORANT_VARIANTS or variant == "I_ab":
        raise ValueError(f"unknown kernel majorant {variant!r}")
    if V.is_zero:
        return 0.0
    g = V.grid
    h = g.h
    d = V.delta if delta is None else delta
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    av = np.abs(V.field)
    jz = g.japanese()

    def far(a, b, power):
        s = a + b
        return np.where(s > 1.0, 1.0 / np.where(s > 1.0, s, 1.0) ** 2, 0.0) / _jp(b - a) ** power

    def near(a, b):
        return np.where(a + b <= 10.0, 1.0, 0.0) * _inv(a, h) * _inv(b, h)

    def dist(p, q):
        return np.sqrt(((p - q) ** 2).sum(-1))

    if variant in ("maineq2", "cm3cm4"):
        cm = variant == "cm3cm4"
        U = _Support(g, av * (jz if cm else 1.0), rel_cut)
        b = dist(x, U.pts)
        a = dist(U.pts, y)
        if cm:
            gap = abs(np.linalg.norm(x) - np.linalg.norm(y))
            ker = _jp(b) * _inv(b, h) * far(a, b, 1) + near(a, b) * gap
        else:
            ker = _jp(b) * _inv(b, h) * far(a, b, 2) + near(a, b)
        return float(U.w @ ker)

    if variant in ("maineq1", "cm1cm2"):
        cm = variant == "cm1cm2"
        U = _Support(g, av * (jz if cm else 1.0), rel_cut)
        Z = _Support(g, av * jz ** (d + 1 if cm else d), rel_cut)
        power = 1 if cm else 2

        def kernel(u, z):
            b = dist(x, u)
            a = dist(z, y)
            return _jp(b) * _inv(b, h) * far(a, b, power) + near(a, b)

        return _pair_sum(U, Z, kernel)

    # maineq8 / cm8: u = x - k, v = x - k - p
    cm = variant == "cm8"
    U = _Support(g, av * (jz if cm else 1.0), rel_cut)
    W = _Support(g, av * (jz if cm else 1.0), rel_cut)

    def kernel(u, v):
        b = dist(x, u)
        a = dist(v, y)
        ip = _inv(dist(u, v), h)
        if cm:
            return ip * (_jp(b) * _inv(b, h) * far(a, b, 1) + near(a, b) * np.abs(b - a))
        return ip * (_jp(b) * _inv(b, h) * far(a, b, 2) + near(a, b))

    return _pair_sum(U, W, kernel)


# ---------------------------------------------------------------- F kernels

F_VARIANTS = ("F", "F1", "F2")


def sinc_kernel_field(grid: Grid3, y, q: float) -> np.ndarray:
    """sin(q|z-y|)/|z-y| on the grid (value q at z = y)."""
    x1, x2, x3 = grid.coords
    y = np.asarray(y, dtype=float)
    r = np.sqrt((x1 - y[0]) ** 2 + (x2 - y[1]) ** 2 + (x3 - y[2]) ** 2)
    return q * np.sinc(q * r / np.pi) + 0j


def f_kernel_field(V: Potential, y, which: str, M: float, panels: int = 2, nodes: int = 8,
                   projection: ContinuousProjection | None = None,
                   contexts: dict | None = None) -> np.ndarray:
    """x -> F(x, y) (or F1, F2) on the whole grid for one source point y.

    F  = int q dq beta  4 pi R_0^-[V R^- P_c (V s_y)]
    F1 = int q dq beta  4 pi R_0^-[V R_1 (V s_y)],   R_1 = -R_0^- V R^- P_c
    F2 = int q dq beta  4 pi R_0^-[V R_0^- P_c (V s_y)]
    with s_y(z) = sin(q|z-y|)/|z-y|, so that F = F1 + F2.
    """
    from .waveop import radial_nodes

    if which not in F_VARIANTS:
        raise ValueError(f"which must be one of {F_VARIANTS}")
    g = V.grid
    out = np.zeros(g.shape, dtype=complex)
    if V.is_zero:
        return out
    P = projection if projection is not None else continuous_projection(V)
    cut = CutoffProfile(M)
    contexts = {} if contexts is None else contexts
    qs, ws = radial_nodes(M, panels, nodes)
    for q, wq in zip(qs, ws):
        bq = float(cut.low(q))
        if bq == 0.0:
            continue
        key = round(float(q), 12)
        ctx = contexts.get(key)
        if ctx is None:
            ctx = contexts[key] = ResolventContext(V, float(q), "-", P)
        src = V.field * sinc_kernel_field(g, y, q)
        if which == "F":
            inner = ctx.apply(P(src))
        elif which == "F1":
            inner = ctx.apply_R1(src)
        else:
            inner = ctx.free(P(src))
        out += (FOUR_PI * q * bq * wq) * ctx.free(V.field * inner)
    return out


def eval_F_kernel(V: Potential, x, y, which: str = "F", M: float = 1.0, panels: int = 2,
                  nodes: int = 8, projection: ContinuousProjection | None = None) -> complex:
    g = V.grid
    if V.is_zero:
        return 0j
    field_ = f_kernel_field(V, y, which, M, panels, nodes, projection)
    return complex(field_[g.index_of(x)])
