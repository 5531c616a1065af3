"""
Command-line entry point: scenario configs, probe selection and report output.

Usage::

    waveop-lab <subcommand> [--config FILE] [--out DIR] [--seed N] [--refine K]

Subcommands select probe sets (``run`` executes the set named in the config).
Exit status is 0 when every selected check passes, 2 when a check fails and
1 on configuration or execution errors.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import re
import sys
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import oscillatory as osc
from .grid import make_grid
from .potential import FAMILIES, sample_potential, zero_potential
from .probes import (SCHEMA_VERSION, ProbeEnsemble, ProbeReport, adjoint_probe, fit_constant,
                     lp_ratio_probe, route_agreement)
from .resolvent import ResolventContext, helmholtz_residual
from .waveop import (ROUTES, Scenario, StationaryOperator, WaveOpRoute, commutator_values,
                     intertwining_residual, make_operator)

log = logging.getLogger("waveop_lab")

PROBES = ("sphere", "resolvent", "oscint", "fkernel", "waveop", "lp", "adjoint", "commutator")

SUBCOMMANDS = {
    "verify-sphere": ("sphere",),
    "resolvent-check": ("resolvent",),
    "oscint-bound": ("oscint", "fkernel"),
    "waveop-compare": ("waveop",),
    "lp-probe": ("lp",),
    "adjoint-probe": ("adjoint",),
    "commutator-probe": ("commutator",),
    "run": None,
}

DEFAULTS: dict = {
    "grid": {"n": 32, "L": 8.0},
    "potential": {"family": "gaussian", "coupling": -0.5, "width": 1.0, "delta": 5.0},
    "cutoff": {"M": 1.0},
    "route": {"q_pad": 2, "T": 80.0, "dt": 0.0, "eps_factors": [4.0, 8.0],
              "absorb_pad": 1.5, "absorb_strength": 1.0, "panels": 1, "nodes": 8},
    "ensemble": {"count": 50, "enlarge": 10, "route_samples": 10, "width": 1.0, "band": 1.0},
    "sphere": {"samples": 401, "r_max": 20.0, "tol": 1e-8},
    "resolvent": {"n": 64, "L": 8.0, "q_values": [0.0, 1.0, 2.0], "tol": 1e-3,
                  "born_couplings": [0.1, 0.05], "born_q": 1.0},
    "oscint": {"M": 2.0, "points": 24, "a_min": 1e-2, "a_max": 1e2,
               "families": ["constant", "exponential", "free-gauss", "resolvent"],
               "stability": 0.15},
    "fkernel": {"pairs": 20, "sources": 5, "tol": 1e-3, "radius": 2.5, "rel_cut": 1e-5},
    "waveop": {"tol": 5e-2, "isometry_tol": 1e-2, "intertwining_samples": 2},
    "lp": {"p_values": [1.0, 2.0, 4.0, "inf"]},
    "commutator": {"p_values": [1.0, 2.0], "cross_samples": 2,
                   "cross_tol": 1e-1},
    "probes": {"select": list(PROBES)},
    "run": {"seed": 0, "out": "reports"},
}

SYMBOL_FAMILIES = ("constant", "exponential", "free-gauss", "resolvent")
TRIVIAL_TOL = 1e-10


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

def _key_lines(text: str) -> dict:
    lines, section = {}, ""
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            section = m.group(1).strip()
            lines.setdefault(section, no)
            continue
        m = re.match(r"^([A-Za-z0-9_\-]+)\s*=", line)
        if m:
            lines[f"{section}.{m.group(1)}"] = no
    return lines


def _as_p(v) -> float:
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return float("inf")
    return float(v)


@dataclass
class ScenarioConfig:
    """Resolved scenario: defaults overlaid with a config file and CLI flags."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    source: str = "<defaults>"
    lines: dict = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "ScenarioConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        cfg = cls(source=source, lines=_key_lines(text))
        for sec, body in raw.items():
            if sec not in DEFAULTS:
                raise ConfigError(cfg._where(sec) + f"unknown section [{sec}]")
            if not isinstance(body, dict):
                raise ConfigError(cfg._where(sec) + f"[{sec}] must be a table")
            for key, value in body.items():
                if key not in DEFAULTS[sec]:
                    raise ConfigError(cfg._where(f"{sec}.{key}") + f"unknown key '{sec}.{key}'")
                cfg.data[sec][key] = value
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        return cls.from_text(text, str(p))

    def _where(self, key: str) -> str:
        line = self.lines.get(key)
        return f"{self.source}:{line}: " if line else f"{self.source}: "

    def _fail(self, key: str, msg: str):
        raise ConfigError(self._where(key) + f"'{key}': {msg}")

    def __getitem__(self, sec: str) -> dict:
        return self.data[sec]

    def validate(self):
        d = self.data
        for sec, body in DEFAULTS.items():
            for key, default in body.items():
                v = d[sec][key]
                name = f"{sec}.{key}"
                if isinstance(default, bool):
                    ok = isinstance(v, bool)
                elif isinstance(default, int):
                    ok = isinstance(v, int) and not isinstance(v, bool)
                elif isinstance(default, float):
                    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
                elif isinstance(default, str):
                    ok = isinstance(v, str)
                else:
                    ok = isinstance(v, list)
                if not ok:
                    self._fail(name, f"expected {type(default).__name__}, got {v!r}")
        try:
            make_grid(d["grid"]["n"], float(d["grid"]["L"]))
        except ValueError as exc:
            key = "grid.n" if "n must" in str(exc) else "grid.L"
            self._fail(key, str(exc))
        try:
            make_grid(d["resolvent"]["n"], float(d["resolvent"]["L"]))
        except ValueError as exc:
            self._fail("resolvent.n", str(exc))
        if d["potential"]["family"] not in FAMILIES:
            self._fail("potential.family", f"expected one of {FAMILIES}")
        for key in ("width", "delta"):
            if not d["potential"][key] > 0:
                self._fail(f"potential.{key}", "must be positive")
        if not d["cutoff"]["M"] > 0:
            self._fail("cutoff.M", "must be positive")
        g = make_grid(d["grid"]["n"], float(d["grid"]["L"]))
        if d["cutoff"]["M"] >= g.nyquist:
            self._fail("cutoff.M", f"must be below the grid Nyquist {g.nyquist:.4g}")
        try:
            self.route()
        except ValueError as exc:
            self._fail("route", str(exc))
        for sel in d["probes"]["select"]:
            if sel not in PROBES:
                self._fail("probes.select", f"unknown probe {sel!r}; expected from {PROBES}")
        for fam in d["oscint"]["families"]:
            if fam not in SYMBOL_FAMILIES:
                self._fail("oscint.families", f"unknown symbol family {fam!r}")
        for sec in ("lp", "commutator"):
            try:
                ps = [_as_p(p) for p in d[sec]["p_values"]]
            except (TypeError, ValueError):
                self._fail(f"{sec}.p_values", "entries must be numbers or 'inf'")
            if any(p < 1 for p in ps):
                self._fail(f"{sec}.p_values", "p must be >= 1")
        for key in ("count", "enlarge", "route_samples"):
            if d["ensemble"][key] < 1:
                self._fail(f"ensemble.{key}", "must be positive")
        if d["run"]["seed"] < 0:
            self._fail("run.seed", "must be nonnegative")

    def route(self, refine: int = 0) -> WaveOpRoute:
        r = self.data["route"]
        # dt = 0 picks the step from |V|max
        dt = float(r["dt"]) or None
        base = WaveOpRoute("stationary", q_pad=int(r["q_pad"]), T=float(r["T"]), dt=dt,
                           eps_factors=tuple(float(e) for e in r["eps_factors"]),
                           absorb_pad=float(r["absorb_pad"]),
                           absorb_strength=float(r["absorb_strength"]),
                           panels=int(r["panels"]), nodes=int(r["nodes"]))
        if len(base.eps_factors) != 2 or base.eps_factors[0] >= base.eps_factors[1]:
            raise ValueError("route.eps_factors must be two increasing numbers")
        return base.refined(refine)

    def resolved(self) -> dict:
        return copy.deepcopy(self.data)


# ---------------------------------------------------------------- probe runners

class RunContext:
    """Lazily built scenario objects shared by the probes of one run."""

    def __init__(self, cfg: ScenarioConfig, seed: int, refine: int):
        self.cfg = cfg
        self.seed = seed
        self.refine = refine
        self._cache: dict = {}

    @property
    def grid(self):
        g = self.cfg["grid"]
        return make_grid(g["n"], float(g["L"]))

    def potential(self, grid=None):
        p = self.cfg["potential"]
        grid = grid or self.grid
        if p["coupling"] == 0:
            return zero_potential(grid, float(p["delta"]))
        return sample_potential(p["family"], float(p["coupling"]), float(p["width"]), grid,
                                float(p["delta"]))

    @property
    def V(self):
        if "V" not in self._cache:
            self._cache["V"] = self.potential()
        return self._cache["V"]

    @property
    def trivial(self) -> bool:
        return self.V.is_zero

    def scenario(self, q_pad: int) -> Scenario:
        key = ("scenario", q_pad)
        if key not in self._cache:
            proj = self._cache.get("projection")
            sc = Scenario(self.V, float(self.cfg["cutoff"]["M"]), q_pad, proj)
            self._cache["projection"] = sc.projection
            self._cache[key] = sc
        return self._cache[key]

    def route(self, extra: int = 0) -> WaveOpRoute:
        return self.cfg.route(self.refine + extra)

    def stationary(self) -> StationaryOperator:
        if "stationary" not in self._cache:
            sc = self.scenario(self.route().q_pad)
            self._cache["stationary"] = StationaryOperator(sc).assemble()
        return self._cache["stationary"]

    def ensemble(self, count: int | None = None, seed_offset: int = 0) -> ProbeEnsemble:
        e = self.cfg["ensemble"]
        sc = self.scenario(self.route().q_pad)
        return ProbeEnsemble(sc, count or e["count"], self.seed + seed_offset,
                             band=float(e["band"]), width=float(e["width"]))


def probe_sphere(ctx: RunContext) -> list[ProbeReport]:
    c = ctx.cfg["sphere"]
    rng = np.random.default_rng(ctx.seed)
    u = rng.standard_normal(3)
    u /= np.linalg.norm(u)
    radii = np.linspace(0.0, float(c["r_max"]), int(c["samples"]))
    quad = osc.sphere_quadrature(radii[:, None] * u)
    rows, worst_closed, worst_quad = [], 0.0, 0.0
    for i, r in enumerate(radii):
        val = osc.sphere_integral(r * u)
        closed = 4.0 * np.pi * np.sinc(r / np.pi)
        e1 = abs(val - closed) / (4 * np.pi)
        e2 = abs(quad[i] - val) / (4 * np.pi)
        worst_closed, worst_quad = max(worst_closed, e1), max(worst_quad, e2)
        rows.append((i, float(r), float(val), float(quad[i].real), e1, e2))
    tol = float(c["tol"])
    rep = ProbeReport("sphere", "", "", {"direction": u.tolist()},
                      ("sample_index", "r", "value", "quadrature", "err_closed_form",
                       "err_quadrature"), rows,
                      {"max_rel_err_closed_form": worst_closed, "max_rel_err_quadrature": worst_quad},
                      {"rel_err": tol}, bool(max(worst_closed, worst_quad) <= tol))
    return [rep]


def probe_resolvent(ctx: RunContext) -> list[ProbeReport]:
    c = ctx.cfg["resolvent"]
    from .greens import free_green

    g = make_grid(c["n"], float(c["L"]))
    f = np.exp(-g.r ** 2 / 2.0) + 0j
    rows = []
    for i, q in enumerate(c["q_values"]):
        u = free_green(g, float(q), "-").apply(f)
        rows.append((i, float(q), helmholtz_residual(u, f, float(q), g)))
    worst = max(r[2] for r in rows)
    tol = float(c["tol"])
    helm = ProbeReport("resolvent_helmholtz", "free", "2", {"n": g.n, "L": g.L},
                       ("sample_index", "q", "residual"), rows, {"max_residual": worst},
                       {"residual": tol}, bool(worst <= tol))
    # Born order on the scenario grid with the unit-coupling shape
    p = ctx.cfg["potential"]
    grid = ctx.grid
    shape = sample_potential(p["family"], 1.0, float(p["width"]), grid, float(p["delta"]))
    src = np.exp(-grid.r ** 2 / 2.0) + 0j
    q = float(c["born_q"])
    g0 = free_green(grid, q, "-")
    r0f = g0.apply(src)
    defects = []
    for lam in c["born_couplings"]:
        V = shape.scaled(float(lam))
        ctx_l = ResolventContext(V, q, "-", projection=_identity_projection(V))
        exact = ctx_l.apply(src)
        born = r0f - g0.apply(V.field * r0f)
        defects.append(float(np.linalg.norm(exact - born) / np.linalg.norm(src)))
    ratio = defects[0] / defects[1]
    lam = [float(v) for v in c["born_couplings"]]
    expected = (lam[0] / lam[1]) ** 2
    born_rep = ProbeReport("resolvent_born", "lippmann-schwinger", "2", {"q": q},
                           ("sample_index", "coupling", "defect"),
                           [(i, lam[i], d) for i, d in enumerate(defects)],
                           {"defect_ratio": ratio, "expected_ratio": expected},
                           {"ratio_range": [0.75 * expected, 1.25 * expected]},
                           bool(0.75 * expected <= ratio <= 1.25 * expected))
    return [helm, born_rep]


def _identity_projection(V):
    from .resolvent import BoundStates, ContinuousProjection

    return ContinuousProjection(BoundStates(V.grid, np.zeros(0), np.zeros((0,) + V.grid.shape)))


def symbol_family(name: str, M: float, ctx: RunContext, resolution: int = 1) -> osc.Symbol1D:
    if name == "constant":
        return osc.constant_symbol(M)
    if name == "exponential":
        s = osc.exponential_symbol(M)
    elif name == "free-gauss":
        s = osc.free_gaussian_symbol(M)
    else:
        key = ("rsym", M)
        if key not in ctx._cache:
            p = ctx.cfg["potential"]
            small = make_grid(16, 4.0)
            V = (zero_potential(small) if p["coupling"] == 0 else
                 sample_potential(p["family"], float(p["coupling"]), float(p["width"]), small))
            ctx._cache[key] = osc.resolvent_symbol(V, M)
        s = ctx._cache[key]
    if resolution > 1:
        s = osc.Symbol1D(s.f, s.M, s.name, osc.derivative_bounds(s.f, s.M, n=64 * resolution))
    return s


def probe_oscint(ctx: RunContext) -> list[ProbeReport]:
    c = ctx.cfg["oscint"]
    M = float(c["M"])
    a = np.logspace(np.log10(c["a_min"]), np.log10(c["a_max"]), int(c["points"]))
    A, B = np.meshgrid(a, a, indexing="ij")
    A, B = A.ravel(), B.ravel()
    res = 1 + ctx.refine
    rows, coarse, fine = [], [], []
    per_family = {}
    for fam in c["families"]:
        s1 = symbol_family(fam, M, ctx, res)
        s2 = symbol_family(fam, M, ctx, 2 * res)
        I1 = np.abs(osc.eval_I_grid(s1, A, B, M, res))
        I2 = np.abs(osc.eval_I_grid(s2, A, B, M, 2 * res))
        m1 = np.array([osc.i_bound_majorant(osc.MajorantParams(x, y, M), s1.C) for x, y in zip(A, B)])
        m2 = np.array([osc.i_bound_majorant(osc.MajorantParams(x, y, M), s2.C) for x, y in zip(A, B)])
        coarse += list(zip(I1, m1))
        fine += list(zip(I2, m2))
        per_family[fam] = {"C_f": s1.C, "K": fit_constant(list(zip(I1, m1))),
                           "C_f_refined": s2.C, "K_refined": fit_constant(list(zip(I2, m2)))}
        for x, y, i1, mm, i2, m2v in zip(A, B, I1, m1, I2, m2):
            rows.append((len(rows), fam, float(x), float(y), float(i1), float(mm), float(i2),
                         float(m2v)))
    K1, K2 = fit_constant(coarse), fit_constant(fine)
    change = abs(K2 - K1) / K1 if K1 > 0 else 0.0
    dominated = all(l <= K1 * m * (1 + 1e-12) for l, m in coarse)
    rep = ProbeReport("oscint", "", "", {"M": M, "points": int(c["points"])},
                      ("sample_index", "family", "a", "b", "abs_I", "majorant", "abs_I_refined",
                       "majorant_refined"), rows,
                      {"K_M": K1, "K_M_refined": K2, "relative_change": change,
                       "dominated": dominated, "families": per_family},
                      {"relative_change": float(c["stability"])},
                      bool(np.isfinite(K1) and change <= float(c["stability"]) and dominated))
    return [rep]


def probe_fkernel(ctx: RunContext) -> list[ProbeReport]:
    c = ctx.cfg["fkernel"]
    V = ctx.V
    g = V.grid
    M = float(ctx.cfg["cutoff"]["M"])
    route = ctx.route()
    rng = np.random.default_rng(ctx.seed + 17)
    rad = float(c["radius"])
    pts = np.stack([c_.ravel() for c_ in g.coords], axis=1)
    near = pts[np.abs(pts).max(axis=1) <= rad]
    ys = near[rng.choice(len(near), int(c["sources"]), replace=False)]
    npairs = int(c["pairs"])
    proj = ctx.scenario(route.q_pad).projection
    direct, split = {}, {}
    rows, samples = [], []
    worst = 0.0
    for i in range(npairs):
        y = ys[i % len(ys)]
        x = near[rng.integers(len(near))]
        key = tuple(y)
        if key not in direct:
            direct[key] = osc.f_kernel_field(V, y, "F", M, route.panels, route.nodes, proj)
            # the split side uses its own radial rule so both sides are quadratured independently
            split[key] = (osc.f_kernel_field(V, y, "F1", M, route.panels + 1, route.nodes - 2, proj),
                          osc.f_kernel_field(V, y, "F2", M, route.panels + 1, route.nodes - 2, proj))
        idx = g.index_of(x)
        F = direct[key][idx]
        F1, F2 = split[key][0][idx], split[key][1][idx]
        scale = max(abs(F), abs(F1) + abs(F2))
        rel = abs(F - F1 - F2) / scale if scale > 0 else 0.0
        worst = max(worst, rel)
        maj = osc.osi_majorant(V, x, y, "maineq1", rel_cut=float(c["rel_cut"]))
        samples.append((abs(F1), maj))
        rows.append((i, *map(float, x), *map(float, y), abs(F), abs(F1), abs(F2), rel, maj))
    K = fit_constant(samples)
    dominated = all(l <= K * m * (1 + 1e-12) for l, m in samples)
    tol = float(c["tol"])
    ok = worst <= tol and dominated and np.isfinite(K)
    if ctx.trivial:
        ok = ok and all(r[7] <= TRIVIAL_TOL for r in rows)
    rep = ProbeReport("fkernel", "kernel_split", "", {"pairs": npairs, "sources": int(c["sources"])},
                      ("sample_index", "x1", "x2", "x3", "y1", "y2", "y3", "abs_F", "abs_F1",
                       "abs_F2", "rel_split_defect", "maineq1"), rows,
                      {"max_rel_split_defect": worst, "K_maineq1": K, "dominated": dominated},
                      {"rel_split_defect": tol}, bool(ok))
    return [rep]


def _route_ops(ctx: RunContext, route: WaveOpRoute) -> dict:
    sc = ctx.scenario(route.q_pad)
    return {n: make_operator(sc, replace(route, route=n)).apply for n in ROUTES}


def probe_waveop(ctx: RunContext) -> list[ProbeReport]:
    c = ctx.cfg["waveop"]
    route = ctx.route()
    n = int(ctx.cfg["ensemble"]["route_samples"])
    ens = ctx.ensemble(n)
    tol = TRIVIAL_TOL if ctx.trivial else float(c["tol"])
    agree = route_agreement(_route_ops(ctx, route), ens, _route_ops(ctx, ctx.route(1)), tol=tol)
    agree.name = "waveop_routes"
    # isometry, intertwining and range orthogonality with the stationary route
    sc = ctx.scenario(route.q_pad)
    op = StationaryOperator(sc)
    rows = []
    iso_tol = TRIVIAL_TOL if ctx.trivial else float(c["isometry_tol"])
    worst_iso = worst_orth = worst_int = 0.0
    bound = sc.projection.bound
    for i, psi in enumerate(ens):
        out = op.apply(psi)
        b = sc.band_limit(psi)
        iso = float(np.linalg.norm(out) / np.linalg.norm(b))
        raw = sc.band_limit(psi) + op.scattered(psi)
        orth = float(np.abs(sc.projection.overlaps(raw)).max(initial=0.0)) / float(
            np.sqrt(np.vdot(psi, psi).real * sc.grid.cell_volume))
        inter = (intertwining_residual(sc, op, psi)
                 if i < int(c["intertwining_samples"]) else float("nan"))
        worst_iso = max(worst_iso, abs(iso - 1.0))
        worst_orth = max(worst_orth, orth)
        if np.isfinite(inter):
            worst_int = max(worst_int, inter)
        rows.append((i, iso, inter, orth))
    ok = worst_iso <= iso_tol and worst_int <= 5e-2 and worst_orth <= 1e-3
    props = ProbeReport("waveop_properties", "stationary", "2", ens.spec(),
                        ("sample_index", "isometry_ratio", "intertwining_residual",
                         "bound_overlap"),
                        [tuple("" if isinstance(v, float) and np.isnan(v) else v for v in r)
                         for r in rows],
                        {"max_isometry_defect": worst_iso, "max_intertwining": worst_int,
                         "max_bound_overlap": worst_orth, "bound_energies": bound.energies.tolist()},
                        {"isometry_defect": iso_tol, "intertwining": 5e-2, "bound_overlap": 1e-3},
                        bool(ok))
    return [agree, props]


def _memo(op):
    cache = {}

    def run(psi):
        key = psi.tobytes()
        if key not in cache:
            cache[key] = op(psi)
        return cache[key]

    return run


def probe_lp(ctx: RunContext) -> list[ProbeReport]:
    op = ctx.stationary()
    sc = op.sc
    apply = _memo(op.apply)
    ens = ctx.ensemble()
    enlarge = int(ctx.cfg["ensemble"]["enlarge"])
    reports = []
    for p in ctx.cfg["lp"]["p_values"]:
        p = _as_p(p)
        rep = lp_ratio_probe(apply, p, ens, route="stationary", enlarge=enlarge)
        rep.name = f"lp_p{rep.p}"
        reports.append(rep)
    if ctx.trivial:
        dev = max(float(np.abs(apply(psi) - sc.band_limit(psi)).max()) for psi in ens)
        for rep in reports:
            rep.metrics["max_deviation_from_filter"] = dev
            rep.passed = rep.passed and dev <= TRIVIAL_TOL
    return reports


def probe_adjoint(ctx: RunContext) -> list[ProbeReport]:
    op = ctx.stationary()
    enlarge = int(ctx.cfg["ensemble"]["enlarge"])
    return [adjoint_probe(op, ctx.ensemble(), enlarge=enlarge)]


def probe_commutator(ctx: RunContext) -> list[ProbeReport]:
    c = ctx.cfg["commutator"]
    op = ctx.stationary()
    sc = op.sc
    comm = _memo(lambda psi: commutator_values(psi, sc, op))
    ens = ctx.ensemble()
    enlarge = int(ctx.cfg["ensemble"]["enlarge"])
    reports = []
    for p in c["p_values"]:
        p = _as_p(p)
        rep = lp_ratio_probe(comm, p, ens, route="stationary", enlarge=enlarge, target_p=np.inf)
        rep.name = f"commutator_p{_p_name(p)}"
        if ctx.trivial:
            rep.passed = rep.passed and rep.metrics["max_ratio_enlarged"] <= TRIVIAL_TOL
        reports.append(rep)
    # cross-route agreement with the time route, one level finer in T and absorber
    fine = ctx.route(1)
    route = replace(ctx.route(), route="time_limit", T=fine.T, absorb_pad=fine.absorb_pad)
    timer = make_operator(sc, route)
    rows = []
    for i in range(int(c["cross_samples"])):
        psi = ens.member(i)
        a = comm(psi)
        b = commutator_values(psi, sc, timer)
        scale = 0.5 * (np.linalg.norm(a) + np.linalg.norm(b))
        rows.append((i, float(np.linalg.norm(a - b) / scale) if scale > 0 else 0.0))
    worst = max(r[1] for r in rows)
    tol = TRIVIAL_TOL if ctx.trivial else float(c["cross_tol"])
    reports.append(ProbeReport("commutator_routes", "stationary,time_limit", "2", ens.spec(),
                               ("sample_index", "distance"), rows, {"max_distance": worst},
                               {"distance": tol}, bool(worst <= tol)))
    return reports


def _p_name(p: float) -> str:
    return "inf" if np.isinf(p) else f"{p:g}"


RUNNERS = {
    "sphere": probe_sphere,
    "resolvent": probe_resolvent,
    "oscint": probe_oscint,
    "fkernel": probe_fkernel,
    "waveop": probe_waveop,
    "lp": probe_lp,
    "adjoint": probe_adjoint,
    "commutator": probe_commutator,
}


# ---------------------------------------------------------------- driver

def run_scenario(cfg: ScenarioConfig, probes=None, out: str | Path | None = None,
                 seed: int | None = None, refine: int = 0) -> tuple[int, dict]:
    """Run the selected probes, write reports, return (exit status, summary)."""
    seed = int(cfg["run"]["seed"] if seed is None else seed)
    out_dir = Path(out if out is not None else cfg["run"]["out"])
    selected = list(probes if probes is not None else cfg["probes"]["select"])
    ctx = RunContext(cfg, seed, refine)
    t0 = time.time()
    entries, status = [], 0
    for name in selected:
        t1 = time.time()
        try:
            reports = RUNNERS[name](ctx)
        except Exception as exc:
            log.error("probe %s failed: %s", name, exc)
            entries.append({"name": name, "status": "error", "metrics": {"error": str(exc)},
                            "samples_csv_path": None})
            status = 1
            break
        for rep in reports:
            _, csv_path = rep.write(out_dir)
            d = rep.to_dict(csv_path.name)
            entries.append({"name": rep.name, "status": rep.status, "metrics": d["metrics"],
                            "tolerance": d["tolerance"], "samples_csv_path": csv_path.name})
            log.info("%-22s %s  (%.1f s)", rep.name, rep.status.upper(), time.time() - t1)
            if not rep.passed and status == 0:
                status = 2
    summary = {
        "schema_version": SCHEMA_VERSION,
        "scenario": {"config": cfg.resolved(), "source": cfg.source, "seed": seed,
                     "refine": refine, "probes": selected},
        "probes": entries,
        "metadata": {"created": datetime.now(timezone.utc).isoformat(),
                     "elapsed_s": round(time.time() - t0, 3), "exit_status": status},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return status, summary


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="waveop-lab",
                                 description="Low-frequency wave operator probes")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="scenario file (TOML)")
        sp.add_argument("--out", help="report directory")
        sp.add_argument("--seed", type=int, help="base seed (overrides run.seed)")
        sp.add_argument("--refine", type=int, default=0,
                        help="double route resolutions this many times")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        cfg = ScenarioConfig.from_file(args.config) if args.config else ScenarioConfig()
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        if args.refine < 0:
            raise ConfigError("--refine must be nonnegative")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    probes = SUBCOMMANDS[args.command]
    status, _ = run_scenario(cfg, probes, args.out, args.seed, args.refine)
    return status


if __name__ == "__main__":
    sys.exit(main())
