import csv
import json

import pytest

from waveop_lab.cli import (DEFAULTS, PROBES, SUBCOMMANDS, ConfigError, ScenarioConfig, main,
                            run_scenario)

SMALL = """
[grid]
n = 16
L = 8.0

[potential]
family = "gaussian"
coupling = {coupling}
width = 2.0

[ensemble]
count = 3
enlarge = 2
route_samples = 2

[resolvent]
n = 32
L = 8.0
tol = 1e-2

[oscint]
points = 6
families = ["constant", "exponential"]

[fkernel]
pairs = 4
sources = 2

[commutator]
cross_samples = 1
cross_tol = 0.5
"""


def small(coupling=-0.2):
    return ScenarioConfig.from_text(SMALL.format(coupling=coupling), "small.toml")


class TestConfig:
    def test_defaults_are_valid(self):
        cfg = ScenarioConfig()
        cfg.validate()
        assert cfg["grid"] == {"n": 32, "L": 8.0}
        assert cfg.route().dt is None and cfg.route().eps_factors == (4.0, 8.0)

    def test_overlay(self):
        cfg = small()
        assert cfg["grid"]["n"] == 16 and cfg["cutoff"]["M"] == DEFAULTS["cutoff"]["M"]
        assert cfg.route(1).q_pad == 3

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError, match=r"cfg.toml:3: unknown key 'grid.size'"):
            ScenarioConfig.from_text("[grid]\nn = 16\nsize = 3\n", "cfg.toml")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match=r"cfg.toml:1: unknown section \[solver\]"):
            ScenarioConfig.from_text("[solver]\nx = 1\n", "cfg.toml")

    @pytest.mark.parametrize("text, key", [
        ("[grid]\nn = 12\n", "grid.n"),
        ("[grid]\nn = \"big\"\n", "grid.n"),
        ("[cutoff]\nM = 9.0\n", "cutoff.M"),
        ("[potential]\nfamily = \"coulomb\"\n", "potential.family"),
        ("[lp]\np_values = [0.5]\n", "lp.p_values"),
        ("[lp]\np_values = [\"two\"]\n", "lp.p_values"),
        ("[run]\nseed = -1\n", "run.seed"),
        ("[probes]\nselect = [\"nope\"]\n", "probes.select"),
        ("[route]\neps_factors = [8.0, 4.0]\n", "route"),
    ])
    def test_invalid_values_name_the_key(self, text, key):
        with pytest.raises(ConfigError, match=f"'{key}'"):
            ScenarioConfig.from_text(text, "cfg.toml")

    def test_syntax_and_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cfg.toml"):
            ScenarioConfig.from_text("[grid\n", "cfg.toml")
        with pytest.raises(ConfigError, match="cannot read"):
            ScenarioConfig.from_file(tmp_path / "missing.toml")

    def test_subcommands_cover_probes(self):
        covered = {p for v in SUBCOMMANDS.values() if v for p in v}
        assert covered == set(PROBES)


class TestMain:
    def test_verify_sphere(self, tmp_path):
        assert main(["verify-sphere", "--out", str(tmp_path)]) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["schema_version"] == "1.0"
        assert summary["probes"][0]["status"] == "pass"
        rows = list(csv.DictReader((tmp_path / "sphere.csv").open()))
        assert len(rows) == 401 and float(rows[-1]["r"]) == 20.0

    def test_config_errors_exit_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[grid]\nn = 7\n")
        assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 1
        assert "bad.toml:2" in capsys.readouterr().err
        assert main(["run", "--refine", "-1", "--out", str(tmp_path)]) == 1

    def test_failed_check_exits_two(self, tmp_path):
        cfg = tmp_path / "strict.toml"
        cfg.write_text("[sphere]\ntol = 1e-30\n")
        assert main(["verify-sphere", "--config", str(cfg), "--out", str(tmp_path)]) == 2


class TestRunScenario:
    def test_probe_reports(self, tmp_path):
        status, summary = run_scenario(small(), ["lp", "adjoint", "commutator"], tmp_path)
        names = [e["name"] for e in summary["probes"]]
        assert names == ["lp_p1", "lp_p2", "lp_p4", "lp_pinf", "adjoint", "commutator_p1",
                         "commutator_p2", "commutator_routes"]
        assert all(e["status"] in ("pass", "fail") for e in summary["probes"])
        lp2 = json.loads((tmp_path / "lp_p2.json").read_text())
        assert lp2["metrics"]["max_ratio"] <= 1.01
        assert lp2["samples_csv_path"] == "lp_p2.csv"
        rows = list(csv.reader((tmp_path / "lp_p2.csv").open()))
        assert rows[0] == ["sample_index", "ratio"] and len(rows) == 7
        assert status in (0, 2)

    def test_seed_changes_ensemble(self, tmp_path):
        _, a = run_scenario(small(), ["lp"], tmp_path / "a", seed=1)
        _, b = run_scenario(small(), ["lp"], tmp_path / "b", seed=2)
        assert a["probes"][0]["metrics"] != b["probes"][0]["metrics"]
        assert a["scenario"]["seed"] == 1

    def test_free_run_is_trivial(self, tmp_path):
        status, summary = run_scenario(small(0.0), None, tmp_path)
        by_name = {e["name"]: e for e in summary["probes"]}
        assert status == 0, [(n, e["status"]) for n, e in by_name.items()]
        assert by_name["waveop_properties"]["metrics"]["max_isometry_defect"] <= 1e-10
        assert by_name["commutator_p1"]["metrics"]["max_ratio"] == 0.0

    def test_execution_error_exits_one(self, tmp_path, monkeypatch):
        import waveop_lab.cli as cli

        def boom(ctx):
            raise RuntimeError("solver exploded")

        monkeypatch.setitem(cli.RUNNERS, "sphere", boom)
        status, summary = run_scenario(ScenarioConfig(), ["sphere"], tmp_path)
        assert status == 1 and summary["probes"][0]["status"] == "error"
        assert "exploded" in summary["probes"][0]["metrics"]["error"]
