"""
Ensemble probes of operator norms, constant fitting and structured reports.

Every probe returns a ``ProbeReport``: per-sample values, summary metrics and a
pass/fail status.  Reports serialize to JSON (metrics) plus a CSV table of the
samples, with ``SCHEMA_VERSION`` recorded in the JSON.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grid import Grid3, array_lp_norm, beta, boundary_fraction
from .waveop import Scenario

SCHEMA_VERSION = "1.0"
STABILITY_TOL = 0.25
ENSEMBLE_DECAY_TOL = 1e-8


class ProbeError(RuntimeError):
    def __init__(self, message: str, sample: int | None = None):
        super().__init__(message if sample is None else f"sample {sample}: {message}")
        self.sample = sample


def _pnorm_label(p: float) -> str:
    return "inf" if np.isinf(p) else f"{p:g}"


@dataclass
class ProbeEnsemble:
    """Random localized fields band-limited on a scenario's q-lattice.

    White noise under a Gaussian envelope is filtered with beta on the padded
    lattice and then multiplied by a smooth box window (1 for |x_i| <= 0.6 L,
    0 for |x_i| >= 0.87 L, pulled inward on grids coarser than h = 0.065 L).  The window makes every field vanish near the box
    faces; ``pass_fraction`` reports how much of a member beta keeps.

    Member i depends only on (seed, i), so a larger ensemble with the same
    seed contains the smaller one as a prefix.

    Parameters
    ----------
    scenario : Scenario
        Supplies the grid, the cutoff and the padded lattice for filtering.
    count : int
        Number of fields.
    seed : int
        Base seed.
    source_p : float
        Each field has unit L^p norm for this p.
    band : float
        Fields are filtered with beta(|k| <= band * M); band = 0.5 keeps them
        inside the region where beta(|k| <= M) = 1.
    width : float
        Width of the Gaussian envelope applied to white noise before filtering.
    """

    scenario: Scenario
    count: int = 50
    seed: int = 0
    source_p: float = 2.0
    band: float = 1.0
    width: float = 1.0
    decay_tol: float = ENSEMBLE_DECAY_TOL

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("ensemble count must be positive")
        if not 0 < self.band <= 1:
            raise ValueError("band must lie in (0, 1]")

    @property
    def grid(self) -> Grid3:
        return self.scenario.grid

    def member(self, i: int) -> np.ndarray:
        g, sc = self.grid, self.scenario
        rng = np.random.default_rng([self.seed, i])
        c = rng.uniform(-0.5, 0.5, 3)
        x, y, z = g.coords
        env = np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2) / (2 * self.width ** 2))
        noise = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
        coeff = sc.big.forward(sc._lift(noise * env))
        coeff *= sc.cutoff.low(sc.big.kabs / self.band)
        f = sc._drop(sc.big.inverse(coeff)) * self.window
        f = f / array_lp_norm(f, g, self.source_p)
        bf = boundary_fraction(f)
        if bf > self.decay_tol:
            raise ProbeError(f"ensemble field not decayed at the boundary ({bf:.3f})", i)
        return f

    @property
    def window(self) -> np.ndarray:
        g = self.grid
        # zero on the two outer cells the decay check looks at, even on coarse grids
        outer = min(0.87 * g.L, g.L - 2.0 * g.h)
        inner = outer * 0.6 / 0.87
        w = np.ones(g.shape)
        for c in g.coords:
            t = (outer - np.abs(c)) / (outer - inner)
            w *= beta(0.5 + 0.5 * np.clip(t, 0.0, 1.0))
        return w

    def pass_fraction(self, i: int) -> float:
        """||beta psi_i||_2 / ||psi_i||_2 on the scenario lattice."""
        f = self.member(i)
        return float(np.linalg.norm(self.scenario.band_limit(f)) / np.linalg.norm(f))

    def __iter__(self):
        for i in range(self.count):
            yield self.member(i)

    def enlarged(self, factor: int = 10) -> "ProbeEnsemble":
        return ProbeEnsemble(self.scenario, self.count * factor, self.seed, self.source_p,
                             self.band, self.width, self.decay_tol)

    def spec(self) -> dict:
        return {"count": self.count, "seed": self.seed, "source_p": self.source_p,
                "band": self.band, "width": self.width, "q_pad": self.scenario.q_pad,
                "M": self.scenario.M}


@dataclass
class ProbeReport:
    """Result of one probe run."""

    name: str
    route: str = ""
    p: str = ""
    ensemble: dict = field(default_factory=dict)
    columns: tuple[str, ...] = ("sample_index", "ratio")
    rows: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    tolerance: dict = field(default_factory=dict)
    passed: bool = True
    notes: list = field(default_factory=list)

    @property
    def ratios(self) -> np.ndarray:
        col = self.columns.index("ratio") if "ratio" in self.columns else len(self.columns) - 1
        return np.array([r[col] for r in self.rows], dtype=float)

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self, csv_path: str | None = None) -> dict:
        d = asdict(self)
        d.pop("rows")
        d["columns"] = list(self.columns)
        d["status"] = self.status
        d["schema_version"] = SCHEMA_VERSION
        d["samples_csv_path"] = csv_path
        return _jsonable(d)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def write(self, out_dir: str | Path, stem: str | None = None) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.name
        csv_path = out / f"{stem}.csv"
        json_path = out / f"{stem}.json"
        csv_path.write_text(self.csv_text())
        json_path.write_text(json.dumps(self.to_dict(csv_path.name), indent=2, sort_keys=True))
        return json_path, csv_path


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def fit_constant(samples: Sequence[tuple[float, float]]) -> float:
    """Smallest K with lhs <= K * majorant on every sample."""
    K = 0.0
    for i, (lhs, maj) in enumerate(samples):
        lhs = abs(float(lhs))
        maj = float(maj)
        if not (np.isfinite(lhs) and np.isfinite(maj)) or maj < 0:
            raise ProbeError(f"invalid sample ({lhs}, {maj})", i)
        if lhs == 0.0:
            continue
        if maj == 0.0:
            raise ProbeError("majorant vanishes where the left side does not", i)
        K = max(K, lhs / maj)
    return K


def _ratio_rows(values: list[float]) -> list:
    return [(i, float(v)) for i, v in enumerate(values)]


def _checked(v: float, i: int) -> float:
    if not np.isfinite(v):
        raise ProbeError("non-finite ratio", i)
    return float(v)


def growth(small_max: float, large_max: float) -> float:
    """Relative increase of the ensemble maximum under enlargement."""
    if small_max == 0.0:
        return 0.0 if large_max == 0.0 else np.inf
    return large_max / small_max - 1.0


def lp_ratio_probe(op: Callable[[np.ndarray], np.ndarray], p: float, ensemble: ProbeEnsemble,
                   route: str = "", enlarge: int = 0, target_p: float | None = None,
                   batch: Callable[[np.ndarray], np.ndarray] | None = None) -> ProbeReport:
    """||op psi||_q / ||psi||_p over the ensemble (q = target_p, default p).

    With ``enlarge`` > 1 the probe also runs on the enlarged ensemble and
    fails if the maximum grows by more than 25%.  Ratios of the common
    prefix are reused.
    """
    g = ensemble.grid
    tq = p if target_p is None else target_p
    count = ensemble.count * (enlarge if enlarge > 1 else 1)
    big = ensemble.enlarged(enlarge) if enlarge > 1 else ensemble
    ratios = []
    for i in range(count):
        psi = big.member(i)
        try:
            out = op(psi)
        except Exception as exc:  # route failure carries the sample index
            raise ProbeError(str(exc), i) from exc
        den = array_lp_norm(psi, g, p)
        ratios.append(_checked(array_lp_norm(out, g, tq) / den, i))
    r = np.array(ratios)
    small = r[:ensemble.count]
    rep = ProbeReport("lp_ratio", route, _pnorm_label(p) if tq == p else
                      f"{_pnorm_label(p)}->{_pnorm_label(tq)}", big.spec(),
                      ("sample_index", "ratio"), _ratio_rows(ratios))
    rep.metrics = {"max_ratio": float(small.max()), "median_ratio": float(np.median(small)),
                   "count": ensemble.count}
    if enlarge > 1:
        gr = growth(small.max(), r.max())
        rep.metrics.update({"max_ratio_enlarged": float(r.max()), "enlarged_count": count,
                            "growth": gr})
        rep.tolerance = {"growth": STABILITY_TOL}
        rep.passed = bool(gr <= STABILITY_TOL)
    if np.isinf(tq):
        rep.notes.append("p = inf ratios use the grid maximum; continuum sup is approximated")
    return rep


def adjoint_probe(operator, ensemble: ProbeEnsemble, pairs: int = 8, enlarge: int = 0,
                  tol: float = 1e-8) -> ProbeReport:
    """L^1 and L^inf ratios of beta Omega_+^* plus the bilinear adjoint identity.

    ``operator`` is a StationaryOperator; its assembled basis gives both the
    forward map and its conjugate transpose.
    """
    operator.assemble()
    g = ensemble.grid
    h3 = g.cell_volume
    count = ensemble.count * (enlarge if enlarge > 1 else 1)
    big = ensemble.enlarged(enlarge) if enlarge > 1 else ensemble
    rows = []
    fields = []
    for i in range(count):
        phi = big.member(i)
        adj = operator.adjoint(phi)
        fwd = operator.apply(phi)
        r1 = _checked(array_lp_norm(adj, g, 1) / array_lp_norm(phi, g, 1), i)
        rinf = _checked(array_lp_norm(adj, g, np.inf) / array_lp_norm(phi, g, np.inf), i)
        rinf_fwd = _checked(array_lp_norm(fwd, g, np.inf) / array_lp_norm(phi, g, np.inf), i)
        rows.append([i, r1, rinf, rinf_fwd, np.nan])
        if i < 2 * pairs:
            fields.append(phi)
    defects = []
    for j in range(min(pairs, len(fields) // 2)):
        psi, phi = fields[2 * j], fields[2 * j + 1]
        lhs = np.vdot(operator.apply(psi), phi) * h3
        rhs = np.vdot(psi, operator.adjoint(phi)) * h3
        d = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
        defects.append(d)
        rows[j][4] = d
    arr = np.array([r[:4] for r in rows], dtype=float)
    n0 = ensemble.count
    m = {
        "max_ratio_p1": float(arr[:n0, 1].max()),
        "median_ratio_p1": float(np.median(arr[:n0, 1])),
        "max_ratio_pinf": float(arr[:n0, 2].max()),
        "max_forward_ratio_pinf": float(arr[:n0, 3].max()),
        "adjoint_defect": float(max(defects)) if defects else 0.0,
        "count": n0,
    }
    m["duality_factor"] = float(max(m["max_ratio_p1"] / m["max_forward_ratio_pinf"],
                                    m["max_forward_ratio_pinf"] / m["max_ratio_p1"]))
    passed = m["adjoint_defect"] <= tol and m["duality_factor"] <= 2.0
    tolerance = {"adjoint_defect": tol, "duality_factor": 2.0}
    if enlarge > 1:
        m["max_ratio_p1_enlarged"] = float(arr[:, 1].max())
        m["growth_p1"] = growth(m["max_ratio_p1"], m["max_ratio_p1_enlarged"])
        tolerance["growth_p1"] = STABILITY_TOL
        passed = passed and m["growth_p1"] <= STABILITY_TOL
    rep = ProbeReport("adjoint", "stationary", "1,inf", big.spec(),
                      ("sample_index", "ratio_p1", "ratio_pinf", "forward_ratio_pinf",
                       "adjoint_defect"),
                      [tuple(r) for r in rows], m, tolerance, bool(passed))
    rep.rows = [tuple("" if isinstance(v, float) and np.isnan(v) else v for v in r)
                for r in rep.rows]
    return rep


def route_agreement(operators: dict, ensemble: ProbeEnsemble, refined: dict | None = None,
                    tol: float = 5e-2) -> ProbeReport:
    """Pairwise relative L^2 distances between routes on each sample.

    Distances are relative to the mean norm of the two outputs.  With
    ``refined`` operators (same keys) the distances are recomputed and
    must shrink on every sample for the report to pass.
    """
    names = list(operators)
    if len(names) < 2:
        raise ValueError("route_agreement needs at least two routes")
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]

    def distances(ops):
        out = np.zeros((ensemble.count, len(pairs)))
        for i, psi in enumerate(ensemble):
            res = {}
            for n in names:
                try:
                    res[n] = ops[n](psi)
                except Exception as exc:
                    raise ProbeError(f"route {n} failed: {exc}", i) from exc
            for j, (a, b) in enumerate(pairs):
                na, nb = np.linalg.norm(res[a]), np.linalg.norm(res[b])
                scale = 0.5 * (na + nb)
                out[i, j] = np.linalg.norm(res[a] - res[b]) / scale if scale > 0 else 0.0
        return out

    base = distances(operators)
    labels = [f"{a}|{b}" for a, b in pairs]
    cols = ["sample_index"] + [f"d[{lab}]" for lab in labels]
    m = {f"max_d[{lab}]": float(base[:, j].max()) for j, lab in enumerate(labels)}
    passed = bool(base.max() <= tol)
    rows = [[i] + list(base[i]) for i in range(ensemble.count)]
    if refined is not None:
        fine = distances(refined)
        cols += [f"d_refined[{lab}]" for lab in labels]
        rows = [r + list(fine[i]) for i, r in enumerate(rows)]
        for j, lab in enumerate(labels):
            m[f"max_d_refined[{lab}]"] = float(fine[:, j].max())
            m[f"mean_d[{lab}]"] = float(base[:, j].mean())
            m[f"mean_d_refined[{lab}]"] = float(fine[:, j].mean())
        # zero distances (V = 0) count as converged
        shrink = [bool(np.all(fine[:, j] < base[:, j])) or base[:, j].max() <= 1e-10
                  for j in range(len(pairs))]
        m["decreasing"] = bool(all(shrink))
        passed = passed and m["decreasing"]
    return ProbeReport("route_agreement", ",".join(names), "2", ensemble.spec(), tuple(cols),
                       [tuple(r) for r in rows], m, {"distance": tol}, passed)
