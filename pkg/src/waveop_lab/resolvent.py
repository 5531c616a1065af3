"""
Free and perturbed resolvents at real energies q^2, the continuous-spectrum
projection P_c, and the remainder R_1(q^2) = R^-(q^2) P_c - R_0^-(q^2) P_c.

The perturbed resolvent is obtained from the Lippmann-Schwinger equation

    u + R_0(q^2) V u = R_0(q^2) f,

solved by GMRES with the truncated-kernel convolution as matvec.  The
Hamiltonian H = -Laplacian + V used for bound states is the spectral
(Fourier) discretization on the periodic box.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh, gmres

from .grid import ComplexField, Grid3, beta, boundary_fraction, fftn, ifftn
from .greens import FreeGreen, free_green, green_kernel
from .potential import Potential

log = logging.getLogger(__name__)

EPS_BOUND = 1e-6
GMRES_RTOL = 1e-12
COND_LIMIT = 1e12


class ResolventError(RuntimeError):
    """Lippmann-Schwinger solve failed or is near-singular."""


class ThresholdError(RuntimeError):
    """A localized eigenvalue sits at the threshold (non-generic V)."""


def free_resolvent_kernel(q: float, r, sign: str = "-"):
    """Kernel e^{-/+ i q r} / (4 pi r) of R_0^{-/+}(q^2)."""
    return green_kernel(q, r, sign)


def apply_free_resolvent(f: ComplexField, q: float, sign: str = "-",
                         decay_tol: float = 1e-8) -> ComplexField:
    bf = boundary_fraction(f.values)
    if bf > decay_tol:
        log.warning("source not negligible at the box boundary (fraction %.2e)", bf)
    return ComplexField(f.grid, free_green(f.grid, float(q), sign).apply(f.values))


def hamiltonian(values: np.ndarray, V: Potential) -> np.ndarray:
    """(-Laplacian + V) psi with the spectral Laplacian."""
    return ifftn(fftn(values) * V.grid.k2) + V.field * values


def interior_window(grid: Grid3, inner: float = 0.25, outer: float = 0.97) -> np.ndarray:
    """Product window equal to 1 for |x_i| <= inner*L, vanishing beyond outer*L."""
    a, b = inner * grid.L, outer * grid.L
    w = np.ones(grid.shape)
    for c in grid.coords:
        w = w * (1.0 - beta(0.5 + 0.5 * (np.abs(c) - a) / (b - a)))
    return w


def helmholtz_residual(u: np.ndarray, f: np.ndarray, q: float, grid: Grid3) -> float:
    """||(-Laplacian - q^2) u - f|| / ||f|| over the interior window plateau.

    u is windowed to make it periodic before applying the spectral Laplacian,
    so the residual is only meaningful where the window equals one.
    """
    w = interior_window(grid)
    res = ifftn(fftn(w * u) * (grid.k2 - q * q)) - f
    inner = w >= 1.0 - 1e-14
    return float(np.linalg.norm(res[inner]) / np.linalg.norm(f))


@dataclass(frozen=True)
class BoundStates:
    """Orthonormal (grid inner product) bound states of H."""

    grid: Grid3
    energies: np.ndarray
    states: np.ndarray = field(repr=False)  # shape (m, n, n, n), real
    box_states: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def count(self) -> int:
        return len(self.energies)


def _localized(phi: np.ndarray, grid: Grid3, tol: float = 1e-3) -> bool:
    shell = np.zeros(grid.shape, dtype=bool)
    for c in grid.coords:
        shell |= np.abs(c) > 0.75 * grid.L
    return float(np.sum(phi[shell] ** 2) / np.sum(phi ** 2)) < tol


def compute_bound_states(V: Potential, eps_bs: float = EPS_BOUND, k0: int = 4,
                         tol: float = 1e-11) -> BoundStates:
    """Eigenpairs of H below -eps_bs that are localized in the box.

    On a periodic box a weak attractive V also produces a slightly negative,
    delocalized "box ground state"; those are continuum states and are kept
    only as diagnostics in ``box_states``.
    """
    g = V.grid
    if V.is_zero or V.field.min() >= 0:
        return BoundStates(g, np.zeros(0), np.zeros((0,) + g.shape))
    N = g.n ** 3

    def mv(x):
        return hamiltonian(x.reshape(g.shape), V).real.ravel()

    op = LinearOperator((N, N), matvec=mv, dtype=float)
    k = k0
    while True:
        try:
            w, vecs = eigsh(op, k=k, which="SA", tol=tol,
                            v0=np.exp(-g.r.ravel() ** 2 / 8.0))
        except Exception as exc:  # ArpackNoConvergence and friends
            raise ResolventError(f"bound-state eigensolve failed: {exc}") from exc
        order = np.argsort(w)
        w, vecs = w[order], vecs[:, order]
        if w[-1] >= -eps_bs or k >= 64:
            break
        k *= 2
    energies, states, box = [], [], []
    for E, v in zip(w, vecs.T):
        phi = v.reshape(g.shape)
        loc = _localized(phi, g)
        if E < -eps_bs and loc:
            energies.append(E)
            states.append(phi / np.sqrt(np.sum(phi ** 2) * g.cell_volume))
        elif E < -eps_bs:
            box.append(E)
        elif E < eps_bs and loc:
            raise ThresholdError(f"localized eigenvalue {E:.3e} at the threshold")
    states = np.array(states) if states else np.zeros((0,) + g.shape)
    if len(states) > 1:
        # re-orthonormalize degenerate clusters
        flat = states.reshape(len(states), -1)
        qmat, _ = np.linalg.qr(flat.T)
        states = (qmat.T / np.sqrt(g.cell_volume)).reshape(states.shape)
    return BoundStates(g, np.array(energies), states, np.array(box))


class ContinuousProjection:
    """P_c = I - sum_j <phi_j, .> phi_j on the grid inner product."""

    def __init__(self, bound: BoundStates):
        self.bound = bound
        self.grid = bound.grid

    @property
    def is_identity(self) -> bool:
        return self.bound.count == 0

    def __call__(self, values: np.ndarray) -> np.ndarray:
        if self.is_identity:
            return values
        h3 = self.grid.cell_volume
        out = np.array(values, dtype=complex, copy=True)
        lead = values.shape[:-3]
        flat_v = out.reshape(lead + (-1,))
        for phi in self.bound.states:
            p = phi.ravel()
            coef = (flat_v @ p) * h3
            flat_v -= np.multiply.outer(coef, p)
        return flat_v.reshape(values.shape)

    def apply(self, f: ComplexField) -> ComplexField:
        return ComplexField(f.grid, self(f.values))

    def overlaps(self, values: np.ndarray) -> np.ndarray:
        h3 = self.grid.cell_volume
        return np.array([np.vdot(phi, values) * h3 for phi in self.bound.states])


def continuous_projection(V: Potential, **kw) -> ContinuousProjection:
    return ContinuousProjection(compute_bound_states(V, **kw))


class ResolventContext:
    """Lippmann-Schwinger data for R^{sign}(q^2) at one momentum q."""

    def __init__(self, V: Potential, q: float, sign: str = "-",
                 projection: ContinuousProjection | None = None,
                 rtol: float = GMRES_RTOL):
        if q < 0:
            raise ValueError("q must be nonnegative")
        self.V = V
        self.q = float(q)
        self.sign = sign
        self.green: FreeGreen = free_green(V.grid, self.q, sign)
        self.projection = projection if projection is not None else continuous_projection(V)
        self.rtol = rtol
        self.iterations: list[int] = []
        N = V.grid.n ** 3
        self._op = LinearOperator((N, N), matvec=self._matvec, dtype=complex)

    @property
    def grid(self) -> Grid3:
        return self.V.grid

    def _matvec(self, x: np.ndarray) -> np.ndarray:
        u = x.reshape(self.grid.shape)
        return (u + self.green.apply(self.V.field * u)).ravel()

    def lippmann_schwinger(self, u: np.ndarray) -> np.ndarray:
        """(I + R_0 V) u."""
        return self._matvec(u.ravel()).reshape(self.grid.shape)

    def free(self, f: np.ndarray) -> np.ndarray:
        return self.green.apply(f)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (I + R_0 V) u = rhs."""
        if self.V.is_zero:
            return np.array(rhs, dtype=complex)
        b = np.asarray(rhs, dtype=complex).ravel()
        nb = np.linalg.norm(b)
        if nb == 0:
            return np.zeros(self.grid.shape, dtype=complex)
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = gmres(self._op, b, rtol=self.rtol, atol=0.0, restart=80, maxiter=20,
                        callback=cb, callback_type="pr_norm")
        self.iterations.append(count[0])
        res = np.linalg.norm(self._op.matvec(x) - b) / nb
        if info != 0 or res > 1e-9:
            raise ResolventError(f"Lippmann-Schwinger GMRES failed at q={self.q:.4g} "
                                 f"(info={info}, residual={res:.2e})")
        return x.reshape(self.grid.shape)

    def apply(self, f: np.ndarray) -> np.ndarray:
        """R^{sign}(q^2) f."""
        return self.solve(self.free(f))

    def apply_R1(self, f: np.ndarray) -> np.ndarray:
        """R_1(q^2) f = R(q^2) P_c f - R_0(q^2) P_c f."""
        pf = self.projection(f)
        r0 = self.free(pf)
        return self.solve(r0) - r0

    def apply_R1_born(self, f: np.ndarray) -> np.ndarray:
        """R_1 via the second resolvent identity, -R_0 V R P_c f."""
        return -self.free(self.V.field * self.apply(self.projection(f)))

    def condition_estimate(self, iters: int = 8, seed: int = 0) -> float:
        """Rough 2-norm condition number of I + R_0 V (power/inverse power)."""
        if self.V.is_zero:
            return 1.0
        rng = np.random.default_rng(seed)
        g = self.grid
        x = rng.standard_normal(g.shape) * np.exp(-g.r ** 2 / 8.0)
        x = x / np.linalg.norm(x)
        smax = 0.0
        for _ in range(iters):
            y = self.lippmann_schwinger(x)
            smax = np.linalg.norm(y)
            x = y / smax
        x = rng.standard_normal(g.shape) * np.exp(-g.r ** 2 / 8.0)
        x = x / np.linalg.norm(x)
        inv = 0.0
        for _ in range(iters):
            y = self.solve(x)
            inv = np.linalg.norm(y)
            x = y / inv
        return float(smax * inv)


def build_resolvent_context(V: Potential, q: float, sign: str = "-",
                            projection: ContinuousProjection | None = None,
                            check_condition: bool = False) -> ResolventContext:
    ctx = ResolventContext(V, q, sign, projection)
    if check_condition:
        cond = ctx.condition_estimate()
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise ResolventError(f"I + R_0 V near-singular at q={q:.4g} (cond ~ {cond:.2e})")
    return ctx


def apply_perturbed_resolvent(ctx: ResolventContext, f: ComplexField) -> ComplexField:
    return ComplexField(f.grid, ctx.apply(f.values))


def apply_R1(ctx: ResolventContext, f: ComplexField) -> ComplexField:
    if ctx.sign != "-":
        raise ValueError("R_1 is defined for the minus boundary value")
    return ComplexField(f.grid, ctx.apply_R1(f.values))


def fd_weights(order: int, offsets: np.ndarray) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at 0 (Vandermonde solve)."""
    offsets = np.asarray(offsets, dtype=float)
    m = len(offsets)
    A = np.vander(offsets, m, increasing=True).T
    b = np.zeros(m)
    b[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(A, b)


def probe_sources(grid: Grid3, count: int, delta: float, seed: int = 0) -> np.ndarray:
    """Localized random test inputs normalized to unit L^1_delta norm."""
    from .grid import array_lp_norm

    rng = np.random.default_rng(seed)
    x, y, z = grid.coords
    out = np.empty((count,) + grid.shape, dtype=complex)
    for i in range(count):
        c = rng.uniform(-2.0, 2.0, 3)
        s = rng.uniform(0.7, 1.5)
        ph = rng.uniform(-1.0, 1.0, 3)
        f = np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2) / (2 * s * s))
        f = f * np.exp(1j * (ph[0] * x + ph[1] * y + ph[2] * z))
        out[i] = f / array_lp_norm(f, grid, 1, delta)
    return out


@dataclass
class DerivativeProbe:
    q: float
    order: int
    step: float
    ratios: np.ndarray

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max()) if len(self.ratios) else 0.0


def resolvent_derivative_probe(V: Potential, q: float, j: int, sources: np.ndarray | None = None,
                               step: float | None = None,
                               projection: ContinuousProjection | None = None,
                               mode: str = "l1-linf") -> DerivativeProbe:
    """Estimate ||q^(j-1) d^j/dq^j R_1(q^2)|| from L^1_delta to L^inf.

    Central differences in q on a (2j+1)-point stencil.  ``mode='weighted-l2'``
    measures L^2_delta -> L^2_{-delta} instead.
    """
    if not 1 <= j <= 4:
        raise ValueError("derivative order j must be in 1..4")
    if q <= 0:
        raise ValueError("q must be positive")
    hq = min(q / 16.0, 0.01) if step is None else float(step)
    if hq > q / 8.0:
        raise ValueError(f"step {hq} too large relative to q={q} (must be <= q/8)")
    g = V.grid
    if sources is None:
        sources = probe_sources(g, 4, V.delta)
    if V.is_zero:
        return DerivativeProbe(q, j, hq, np.zeros(len(sources)))
    if projection is None:
        projection = continuous_projection(V)
    offsets = np.arange(-j, j + 1)
    wts = fd_weights(j, offsets) / hq ** j
    deriv = np.zeros(sources.shape, dtype=complex)
    for m, wm in zip(offsets, wts):
        if wm == 0.0:
            continue
        ctx = ResolventContext(V, q + m * hq, "-", projection)
        for i, f in enumerate(sources):
            deriv[i] += wm * ctx.apply_R1(f)
    deriv *= q ** (j - 1)
    from .grid import array_lp_norm

    ratios = []
    for f, d in zip(sources, deriv):
        if mode == "l1-linf":
            ratios.append(array_lp_norm(d, g, np.inf) / array_lp_norm(f, g, 1, V.delta))
        elif mode == "weighted-l2":
            ratios.append(array_lp_norm(d, g, 2, -V.delta) / array_lp_norm(f, g, 2, V.delta))
        else:
            raise ValueError(f"unknown probe mode {mode!r}")
    return DerivativeProbe(q, j, hq, np.array(ratios))
