"""
Three constructions of the low-frequency wave operator Omega_+ beta(|P| <= M).

All routes act on a field psi given on the box and extended by zero to R^3.
Plane-wave data are taken on the Fourier lattice of a box enlarged ``q_pad``
times, so periodic images of psi sit 2 * q_pad * L away.

stationary    Omega_+ e^{iq.x} = e^{iq.x} - R^-(q^2) V e^{iq.x}, summed over the
              pass-band lattice modes (Lippmann-Schwinger solve per |q| shell).
time_limit    Cook integral P_c psi + i int_0^T e^{-eps t} P_c e^{itH} V e^{-itH_0} psi dt,
              split-step propagation with an absorbing layer outside the box and
              a two-level extrapolation eps -> 0.
kernel_split  radial q-quadrature of the oscillatory-integral form; the sphere
              average of e^{iq.(z-y)} turns the y-integral into a convolution
              with sin(q r)/r, and R^- P_c = R_0^- P_c + R_1 splits it into I_1, I_2.

Sign convention: (Omega_+ - P_c) psi = -(2 pi)^-3 int d^3q P_c R^-(q^2) V e^{iq.x} psi^(q),
which is what the Abel-regularized Cook integral gives; the V = 0 and Born
limits pin it down.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import (ComplexField, CutoffProfile, Grid3, boundary_fraction, crop, embed,
                   fftn, ifftn)
from .greens import free_green
from .potential import Potential
from .resolvent import ContinuousProjection, ResolventContext, continuous_projection

log = logging.getLogger(__name__)

DT_MAX = 0.4
ROUTES = ("time_limit", "stationary", "kernel_split")


class RouteError(RuntimeError):
    pass


@dataclass(frozen=True)
class WaveOpRoute:
    """Route selector plus its resolution parameters."""

    route: str = "stationary"
    q_pad: int = 2
    T: float = 80.0
    dt: float | None = None
    eps_factors: tuple[float, float] = (4.0, 8.0)
    eps: float | None = None
    absorb_pad: float = 1.5
    absorb_strength: float = 1.0
    panels: int = 1
    nodes: int = 8

    def __post_init__(self):
        if self.route not in ROUTES:
            raise ValueError(f"unknown route {self.route!r}; expected one of {ROUTES}")
        if self.q_pad < 1 or self.T <= 0 or (self.dt is not None and self.dt <= 0) or self.panels < 1 or self.nodes < 2:
            raise ValueError("route parameters must be positive")
        if self.absorb_pad <= 1.0:
            raise ValueError("absorb_pad must exceed 1")
        if self.eps is not None and self.eps < 0:
            raise ValueError("eps must be nonnegative")

    def refined(self, k: int = 1) -> "WaveOpRoute":
        """Double the route's resolutions k times.

        q-padding and the absorbing layer grow by one and by half a box per step.
        """
        if k <= 0:
            return self
        return replace(self, q_pad=self.q_pad + k, T=self.T * 2 ** k,
                       absorb_pad=self.absorb_pad + 0.5 * k, panels=self.panels * 2 ** k)


class Scenario:
    """Potential, cutoff and the padded q-lattice shared by all routes."""

    def __init__(self, V: Potential, M: float, q_pad: int = 2,
                 projection: ContinuousProjection | None = None):
        self.V = V
        self.grid: Grid3 = V.grid
        self.cutoff = CutoffProfile(M)
        if M >= self.grid.nyquist:
            raise ValueError(f"cutoff M={M} must be below the grid Nyquist {self.grid.nyquist:.4g}")
        self.q_pad = int(q_pad)
        self.big: Grid3 = self.grid.padded(self.q_pad) if self.q_pad > 1 else self.grid
        self.projection = projection if projection is not None else continuous_projection(V)
        self.weights = self.cutoff.low(self.big.kabs)
        self.band = self.weights > 0
        e = np.round(self.big.k2[self.band], 10)
        self.shell_energies, inv = np.unique(e, return_inverse=True)
        self._shell_index = np.full(self.big.shape, -1)
        self._shell_index[self.band] = inv
        self._contexts: dict[float, ResolventContext] = {}
        self._modes = None

    @property
    def M(self) -> float:
        return self.cutoff.M

    @property
    def n_modes(self) -> int:
        return int(self.band.sum())

    def context(self, q: float) -> ResolventContext:
        key = round(float(q), 12)
        ctx = self._contexts.get(key)
        if ctx is None:
            ctx = ResolventContext(self.V, float(q), "-", self.projection)
            self._contexts[key] = ctx
        return ctx

    def _lift(self, values: np.ndarray) -> np.ndarray:
        return embed(values, self.grid, self.big) if self.q_pad > 1 else values

    def _drop(self, values: np.ndarray) -> np.ndarray:
        return crop(values, self.big, self.grid) if self.q_pad > 1 else values

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        """beta-weighted lattice coefficients of psi (zero outside the pass band)."""
        return self.big.forward(self._lift(values)) * self.weights

    def band_limit(self, values: np.ndarray) -> np.ndarray:
        """beta(|P| <= M) psi on the padded lattice, restricted to the box."""
        return self._drop(self.big.inverse(self.coefficients(values)))

    def shell_fields(self, coeffs: np.ndarray) -> np.ndarray:
        """Split sum_q c_q e^{iq.x} into one box field per |q|^2 shell."""
        out = np.empty((len(self.shell_energies),) + self.grid.shape, dtype=complex)
        for s in range(len(self.shell_energies)):
            c = np.where(self._shell_index == s, coeffs, 0.0)
            out[s] = self._drop(self.big.inverse(c))
        return out

    def mode_list(self) -> tuple[np.ndarray, np.ndarray]:
        """Pass-band lattice vectors (m, 3) and their flat indices."""
        flat = np.flatnonzero(self.band)
        kv = np.stack([k.ravel()[flat] for k in self.big.kvec], axis=1)
        return kv, flat


def _check_input(psi: ComplexField, sc: Scenario):
    if psi.grid != sc.grid:
        raise ValueError("field and potential live on different grids")


# ---------------------------------------------------------------- stationary

class StationaryOperator:
    """Omega_+ beta via distorted plane waves on the padded lattice."""

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self._basis: np.ndarray | None = None
        self._flat: np.ndarray | None = None

    def scattered(self, values: np.ndarray) -> np.ndarray:
        """-sum_q beta c_q R^-(q^2) V e^{iq.x} (before P_c)."""
        sc = self.sc
        if sc.V.is_zero:
            return np.zeros(sc.grid.shape, dtype=complex)
        if self._basis is not None:
            c = self.sc.coefficients(values).ravel()[self._flat]
            return -(c @ self._basis).reshape(sc.grid.shape)
        shells = sc.shell_fields(sc.coefficients(values))
        out = np.zeros(sc.grid.shape, dtype=complex)
        for E, S in zip(sc.shell_energies, shells):
            if not np.any(S):
                continue
            out -= sc.context(np.sqrt(E)).apply(sc.V.field * S)
        return out

    def apply(self, values: np.ndarray) -> np.ndarray:
        sc = self.sc
        return sc.projection(sc.band_limit(values) + self.scattered(values))

    def difference(self, values: np.ndarray) -> np.ndarray:
        """(Omega_+ - P_c) beta psi."""
        return self.sc.projection(self.scattered(values))

    def assemble(self) -> "StationaryOperator":
        """Tabulate R^-(q^2) V e^{iq.x} for every pass-band mode (batch mode)."""
        if self._basis is not None:
            return self
        sc = self.sc
        kv, flat = sc.mode_list()
        basis = np.empty((len(flat),) + sc.grid.shape, dtype=complex)
        if sc.V.is_zero:
            basis[:] = 0
        else:
            for i, k in enumerate(kv):
                ctx = sc.context(np.sqrt(k @ k))
                basis[i] = ctx.apply(sc.V.field * sc.grid.plane_wave(k))
        self._basis = basis.reshape(len(flat), -1)
        self._flat = flat
        return self

    def distorted_wave(self, i: int) -> np.ndarray:
        """Phi_q = e^{iq.x} - R^-(q^2) V e^{iq.x} for the i-th pass-band mode."""
        self.assemble()
        kv, _ = self.sc.mode_list()
        return self.sc.grid.plane_wave(kv[i]) - self._basis[i].reshape(self.sc.grid.shape)

    def adjoint(self, values: np.ndarray) -> np.ndarray:
        """(Omega_+ beta)^* on the grid inner product, i.e. beta Omega_+^*.

        With A psi = P_c sum_q beta_q c_q(psi) Phi_q and c_q = N^-3 sum_x psi(x) e^{-iq.x},
        A^* phi = sum_q beta_q N^-3 e^{iq.y} sum_x conj(Phi_q(x)) (P_c phi)(x).
        """
        sc = self.sc
        self.assemble()
        big = sc.big
        pc = sc.projection(values)
        # sum_x e^{-iq.x} pc(x) is N^3 times the lattice coefficient of the lifted field
        plane = big.forward(sc._lift(pc)).ravel()[self._flat] * big.n ** 3
        proj = plane - self._basis.conj() @ pc.ravel()
        coeff = np.zeros(big.n ** 3, dtype=complex)
        coeff[self._flat] = sc.weights.ravel()[self._flat] * proj / big.n ** 3
        return sc._drop(big.inverse(coeff.reshape(big.shape)))


def waveop_stationary(psi: ComplexField, V: Potential, M: float, q_pad: int = 2,
                      scenario: Scenario | None = None) -> ComplexField:
    sc = scenario if scenario is not None else Scenario(V, M, q_pad)
    _check_input(psi, sc)
    return ComplexField(sc.grid, StationaryOperator(sc).apply(psi.values))


# ---------------------------------------------------------------- time limit

@dataclass
class TimeRouteDiagnostics:
    eps: tuple[float, ...]
    T: float
    steps: int
    tail: tuple[float, ...]
    raw: list = field(default_factory=list, repr=False)

    @property
    def extrapolation_shift(self) -> float:
        """Relative change made by the eps -> 0 extrapolation."""
        if len(self.raw) < 2:
            return 0.0
        a, b = self.raw
        ext = 2 * a - b
        return float(np.linalg.norm(ext - a) / max(np.linalg.norm(ext), 1e-300))


class TimeLimitOperator:
    """Abel-regularized Cook integral with an absorbing layer for e^{itH}."""

    def __init__(self, scenario: Scenario, T: float = 80.0, dt: float | None = None,
                 eps: float | None = None, eps_factors=(4.0, 8.0),
                 absorb_pad: float = 1.5, absorb_strength: float = 1.0,
                 dtype=np.complex64):
        sc = scenario
        self.sc = sc
        vmax = float(np.abs(sc.V.field).max()) if not sc.V.is_zero else 0.0
        if dt is None:
            dt = DT_MAX if vmax == 0.0 else min(DT_MAX, 0.5 / vmax)
        self.T, self.dt = float(T), float(dt)
        if eps is None:
            self.eps = tuple(f / self.T for f in eps_factors)
        else:
            self.eps = (float(eps),)
        if self.dt * vmax > 0.5:
            raise RouteError(f"time step {dt} too large for |V|max={vmax:.3g} (dt*|V| > 0.5)")
        self.prop = sc.grid.padded(absorb_pad)
        self.dtype = dtype
        self.last: TimeRouteDiagnostics | None = None
        g, p = sc.grid, self.prop
        W = np.zeros(p.shape)
        for c in p.coords:
            W += np.clip((np.abs(c) - g.L) / (p.L - g.L), 0.0, None) ** 2
        Vp = embed(sc.V.field, g, p)
        self._half = np.exp(0.5j * self.dt * (Vp + 1j * absorb_strength * W)).astype(dtype)
        self._kin = np.exp(1j * self.dt * p.k2).astype(dtype)

    def _step(self, C: np.ndarray) -> np.ndarray:
        # Strang splitting of e^{i dt (H + iW)}
        return self._half * ifftn(self._kin * fftn(self._half * C)).astype(self.dtype)

    def integral(self, values: np.ndarray) -> np.ndarray:
        """int_0^T e^{-eps t} e^{itH} V e^{-itH_0} beta psi dt, one field per eps."""
        sc, g, p = self.sc, self.sc.grid, self.prop
        neps = len(self.eps)
        if sc.V.is_zero:
            self.last = TimeRouteDiagnostics(self.eps, self.T, 0, (0.0,) * neps)
            return np.zeros((neps,) + g.shape, dtype=complex)
        shells = sc.shell_fields(sc.coefficients(values)) * sc.V.field
        flat = shells.reshape(len(shells), -1)
        E = sc.shell_energies
        eps = np.array(self.eps)
        off = (p.n - g.n) // 2
        box = (slice(None),) + (slice(off, off + g.n),) * 3

        def source(t):
            s = (np.exp(-1j * E * t) @ flat).reshape(g.shape)
            return (np.exp(-eps * t)[:, None, None, None] * s[None]).astype(self.dtype)

        nst = int(round(self.T / self.dt))
        C = np.zeros((neps,) + p.shape, dtype=self.dtype)
        t = nst * self.dt
        s_t = source(t)
        tail = [float(np.exp(-e * t) * np.linalg.norm(flat.sum(axis=0)) / max(e, 1e-12))
                for e in eps]
        for _ in range(nst):
            C[box] += 0.5 * self.dt * s_t
            C = self._step(C)
            t -= self.dt
            s_t = source(t)
            C[box] += 0.5 * self.dt * s_t
        out = crop(C, p, g).astype(complex)
        self.last = TimeRouteDiagnostics(self.eps, self.T, nst, tuple(tail), list(out))
        return out

    def difference(self, values: np.ndarray) -> np.ndarray:
        parts = self.integral(values)
        if len(parts) == 2:
            e1, e2 = self.eps
            # linear extrapolation to eps = 0
            cont = (e2 * parts[0] - e1 * parts[1]) / (e2 - e1)
        else:
            cont = parts[0]
        return self.sc.projection(1j * cont)

    def apply(self, values: np.ndarray) -> np.ndarray:
        sc = self.sc
        return sc.projection(sc.band_limit(values)) + self.difference(values)


def waveop_time_limit(psi: ComplexField, V: Potential, M: float, T: float = 80.0,
                      eps: float | None = None, q_pad: int = 2, dt: float = 0.2,
                      scenario: Scenario | None = None) -> ComplexField:
    sc = scenario if scenario is not None else Scenario(V, M, q_pad)
    _check_input(psi, sc)
    return ComplexField(sc.grid, TimeLimitOperator(sc, T=T, dt=dt, eps=eps).apply(psi.values))


# ---------------------------------------------------------------- kernel split

def radial_nodes(M: float, panels: int = 2, nodes: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes on [0, M], panel edges aligned with M/2."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    lo = np.linspace(0.0, 0.5 * M, panels + 1)
    hi = np.linspace(0.5 * M, M, panels + 1)
    edges = np.concatenate([lo, hi[1:]])
    qs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        qs.append(a + 0.5 * (b - a) * (x + 1.0))
        ws.append(0.5 * (b - a) * w)
    return np.concatenate(qs), np.concatenate(ws)


def sinc_convolution(values: np.ndarray, grid: Grid3, q: float) -> np.ndarray:
    """int sin(q|z-y|)/|z-y| psi(y) d^3y = (4 pi / 2i)(R_0^+ - R_0^-) psi."""
    if q == 0.0:
        return np.zeros(grid.shape, dtype=complex)
    plus = free_green(grid, q, "+").apply(values)
    minus = free_green(grid, q, "-").apply(values)
    return (4.0 * np.pi / 2j) * (plus - minus)


class KernelSplitOperator:
    """(Omega_+ - P_c) beta = I_1 + I_2 by radial quadrature."""

    def __init__(self, scenario: Scenario, panels: int = 2, nodes: int = 8):
        self.sc = scenario
        self.q, self.w = radial_nodes(scenario.M, panels, nodes)

    def parts(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        sc = self.sc
        g = sc.grid
        I1 = np.zeros(g.shape, dtype=complex)
        I2 = np.zeros(g.shape, dtype=complex)
        if sc.V.is_zero:
            return I1, I2
        pref = -4.0 * np.pi / (2.0 * np.pi) ** 3
        for q, wq in zip(self.q, self.w):
            bq = float(sc.cutoff.low(q))
            if bq == 0.0:
                continue
            src = sc.V.field * sinc_convolution(values, g, q)
            ctx = sc.context(q)
            c = pref * q * bq * wq
            I1 += c * ctx.free(sc.projection(src))
            I2 += c * ctx.apply_R1_born(src)
        return I1, I2

    def difference(self, values: np.ndarray) -> np.ndarray:
        I1, I2 = self.parts(values)
        return I1 + I2

    def apply(self, values: np.ndarray) -> np.ndarray:
        sc = self.sc
        return sc.projection(sc.band_limit(values)) + self.difference(values)


def waveop_kernel_split(psi: ComplexField, V: Potential, M: float, panels: int = 2,
                        nodes: int = 8, q_pad: int = 2,
                        scenario: Scenario | None = None) -> tuple[ComplexField, ComplexField]:
    sc = scenario if scenario is not None else Scenario(V, M, q_pad)
    _check_input(psi, sc)
    I1, I2 = KernelSplitOperator(sc, panels, nodes).parts(psi.values)
    return ComplexField(sc.grid, I1), ComplexField(sc.grid, I2)


# ---------------------------------------------------------------- dispatch

def make_operator(scenario: Scenario, route: WaveOpRoute):
    if route.route == "stationary":
        return StationaryOperator(scenario)
    if route.route == "time_limit":
        return TimeLimitOperator(scenario, T=route.T, dt=route.dt, eps=route.eps,
                                 eps_factors=route.eps_factors, absorb_pad=route.absorb_pad,
                                 absorb_strength=route.absorb_strength)
    return KernelSplitOperator(scenario, route.panels, route.nodes)


def commutator_x(psi: ComplexField, V: Potential, M: float, route: WaveOpRoute | str = "stationary",
                 scenario: Scenario | None = None, operator=None,
                 decay_tol: float = 1e-8) -> ComplexField:
    """[|x|, (Omega_+ - P_c) beta] psi = |x| D psi - D(|y| psi)."""
    if isinstance(route, str):
        route = WaveOpRoute(route)
    if route.route not in ("stationary", "time_limit"):
        raise ValueError("commutator is evaluated with the stationary or time_limit route")
    sc = scenario if scenario is not None else Scenario(V, M, route.q_pad)
    _check_input(psi, sc)
    op = operator if operator is not None else make_operator(sc, route)
    return ComplexField(sc.grid, commutator_values(psi.values, sc, op, decay_tol))


def commutator_values(values: np.ndarray, sc: Scenario, op, decay_tol: float = 1e-8) -> np.ndarray:
    r = sc.grid.r
    weighted = r * values
    bf = boundary_fraction(weighted)
    if bf > decay_tol:
        raise RouteError(f"|y|-weighted input not negligible at the boundary ({bf:.2e})")
    return r * op.difference(values) - op.difference(weighted)


def intertwining_residual(sc: Scenario, op, values: np.ndarray, margin: int = 4) -> float:
    """||H Omega beta psi - Omega beta H_0 psi|| / ||psi|| away from the box faces.

    H_0 psi is taken on the padded lattice; H uses an 8th-order central
    difference Laplacian so that the non-periodic output needs no windowing.
    """
    g = sc.grid
    out = op.apply(values)
    h0 = sc._drop(sc.big.inverse(sc.big.forward(sc._lift(values)) * sc.big.k2))
    rhs = op.apply(h0)
    lhs = -fd_laplacian(out, g.h) + sc.V.field * out
    sl = (slice(margin, -margin),) * 3
    return float(np.linalg.norm((lhs - rhs)[sl]) / np.linalg.norm(values))


_FD8 = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560])


def fd_laplacian(u: np.ndarray, h: float) -> np.ndarray:
    """8th-order central-difference Laplacian (periodic wrap; trust only the interior)."""
    out = np.zeros_like(u)
    for ax in range(3):
        for j, c in enumerate(_FD8):
            out += c * np.roll(u, 4 - j, axis=ax)
    return out / (h * h)
