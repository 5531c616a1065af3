import csv
import io
import json

import numpy as np
import pytest

from waveop_lab.grid import array_lp_norm, boundary_fraction, make_grid
from waveop_lab.potential import sample_potential
from waveop_lab.probes import (SCHEMA_VERSION, ProbeEnsemble, ProbeError, ProbeReport,
                               adjoint_probe, fit_constant, growth, lp_ratio_probe,
                               route_agreement)
from waveop_lab.waveop import Scenario, StationaryOperator


@pytest.fixture(scope="module")
def scenario():
    g = make_grid(16, 8.0)
    return Scenario(sample_potential("gaussian", -0.2, 2.0, g), 1.0, 2)


@pytest.fixture(scope="module")
def ensemble(scenario):
    return ProbeEnsemble(scenario, 4, seed=3)


class TestEnsemble:
    def test_members_are_normalized_and_decayed(self, ensemble):
        for psi in ensemble:
            assert array_lp_norm(psi, ensemble.grid, 2) == pytest.approx(1.0)
            assert boundary_fraction(psi) <= 1e-8

    def test_deterministic_prefix(self, ensemble):
        big = ensemble.enlarged(3)
        assert big.count == 12
        assert np.array_equal(big.member(2), ensemble.member(2))
        other = ProbeEnsemble(ensemble.scenario, 4, seed=4)
        assert not np.allclose(other.member(0), ensemble.member(0))

    def test_source_norm_and_pass_fraction(self, scenario):
        ens = ProbeEnsemble(scenario, 1, source_p=1.0)
        assert array_lp_norm(ens.member(0), ens.grid, 1) == pytest.approx(1.0)
        assert 0.5 < ens.pass_fraction(0) <= 1.0

    def test_window(self, ensemble):
        w = ensemble.window
        g = ensemble.grid
        assert w[g.index_of((0, 0, 0))] == 1.0
        assert np.all(w[:2] == 0) and np.all(w[-2:] == 0)

    def test_validation(self, scenario):
        with pytest.raises(ValueError):
            ProbeEnsemble(scenario, 0)
        with pytest.raises(ValueError):
            ProbeEnsemble(scenario, 2, band=1.5)

    def test_undecayed_member_is_reported(self, scenario):
        ens = ProbeEnsemble(scenario, 1, decay_tol=-1.0)
        with pytest.raises(ProbeError, match="sample 0"):
            ens.member(0)


class TestFitting:
    def test_fit_constant(self):
        assert fit_constant([(1.0, 2.0), (-3.0, 2.0), (0.0, 0.0)]) == 1.5
        assert fit_constant([]) == 0.0

    @pytest.mark.parametrize("samples", [[(1.0, 0.0)], [(np.nan, 1.0)], [(1.0, -1.0)]])
    def test_fit_constant_rejects(self, samples):
        with pytest.raises(ProbeError):
            fit_constant(samples)

    def test_growth(self):
        assert growth(2.0, 2.5) == pytest.approx(0.25)
        assert growth(0.0, 0.0) == 0.0
        assert growth(0.0, 1.0) == np.inf


class TestLpProbe:
    def test_scaling_operator(self, ensemble):
        rep = lp_ratio_probe(lambda v: 2 * v, 4.0, ensemble, enlarge=2)
        assert np.allclose(rep.ratios, 2.0)
        assert rep.metrics["growth"] == pytest.approx(0.0, abs=1e-12)
        assert rep.passed and len(rep.rows) == 8

    def test_band_limit_contracts(self, ensemble, scenario):
        rep = lp_ratio_probe(scenario.band_limit, 2.0, ensemble)
        assert rep.metrics["max_ratio"] <= 1.0 + 1e-12

    def test_target_norm_and_note(self, ensemble):
        rep = lp_ratio_probe(lambda v: v, 2.0, ensemble, target_p=np.inf)
        assert rep.p == "2->inf" and rep.notes

    def test_failure_carries_sample(self, ensemble):
        def bad(v):
            raise RuntimeError("solver broke")

        with pytest.raises(ProbeError, match="sample 0: solver broke"):
            lp_ratio_probe(bad, 2.0, ensemble)

    def test_non_finite_ratio(self, ensemble):
        with pytest.raises(ProbeError, match="non-finite"):
            lp_ratio_probe(lambda v: np.full_like(v, np.inf), 2.0, ensemble)


class TestAdjointProbe:
    def test_identity_and_duality(self, scenario, ensemble):
        rep = adjoint_probe(StationaryOperator(scenario), ensemble, pairs=2, enlarge=2)
        assert rep.metrics["adjoint_defect"] <= 1e-10
        assert rep.metrics["duality_factor"] <= 2.0
        assert rep.passed and len(rep.rows) == 8


class TestRouteAgreement:
    def test_synthetic_routes(self, ensemble):
        ops = {"a": lambda v: v, "b": lambda v: 1.02 * v}
        fine = {"a": lambda v: v, "b": lambda v: 1.001 * v}
        rep = route_agreement(ops, ensemble, fine)
        assert rep.metrics["max_d[a|b]"] == pytest.approx(0.02 / 1.01)
        assert rep.metrics["decreasing"] and rep.passed

    def test_refinement_must_shrink(self, ensemble):
        ops = {"a": lambda v: v, "b": lambda v: 1.01 * v}
        worse = {"a": lambda v: v, "b": lambda v: 1.02 * v}
        rep = route_agreement(ops, ensemble, worse)
        assert not rep.metrics["decreasing"] and not rep.passed

    def test_zero_distances_count_as_converged(self, ensemble):
        ops = {"a": lambda v: v, "b": lambda v: v}
        assert route_agreement(ops, ensemble, ops).passed

    def test_tolerance_and_validation(self, ensemble):
        ops = {"a": lambda v: v, "b": lambda v: 1.2 * v}
        assert not route_agreement(ops, ensemble).passed
        with pytest.raises(ValueError):
            route_agreement({"a": lambda v: v}, ensemble)


class TestReport:
    def make(self):
        return ProbeReport("demo", "stationary", "2", {"count": 2},
                           ("sample_index", "ratio"), [(0, 0.5), (1, float("nan"))],
                           {"max_ratio": 0.5, "bad": float("inf")}, {"growth": 0.25}, False)

    def test_csv(self):
        rows = list(csv.reader(io.StringIO(self.make().csv_text())))
        assert rows == [["sample_index", "ratio"], ["0", "0.5"], ["1", "nan"]]

    def test_dict_and_write(self, tmp_path):
        rep = self.make()
        d = rep.to_dict()
        assert d["schema_version"] == SCHEMA_VERSION and d["status"] == "fail"
        assert d["metrics"]["bad"] == "inf"
        jpath, cpath = rep.write(tmp_path / "out")
        data = json.loads(jpath.read_text())
        assert data["samples_csv_path"] == "demo.csv" and cpath.exists()
        assert data["columns"] == ["sample_index", "ratio"]
