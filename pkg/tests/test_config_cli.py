import datetime as dt
import json
import logging
import warnings
from pathlib import Path

import numpy as np
import pytest

from nonlocal_fk import ConfigurationError, Field, Grid
from nonlocal_fk.cli import emit_plotdata, main, make_run_dir, run_experiment
from nonlocal_fk.config import DEFAULTS, ExperimentConfig
from nonlocal_fk.experiments import closed_form_check
from nonlocal_fk.io import read_table, write_binary

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def load_report(run_dir):
    return json.loads((run_dir / "report.json").read_text())


class TestConfig:
    def test_defaults_validate(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.raw == DEFAULTS
        assert cfg.params().theta == 1.0

    def test_lists_every_problem(self):
        bad = {
            "grid": {"N": 3},
            "model": {"mortality": 5.0},
            "solver": {"T": 1.0, "dt": 0.3},
            "taylor": {"n_max": 40},
            "bogus": {},
        }
        with pytest.raises(ConfigurationError) as info:
            ExperimentConfig.from_dict(bad)
        text = " | ".join(info.value.problems)
        for key in ("bogus", "grid", "model.mortality", "solver.T", "taylor.n_max"):
            assert key in text
        assert len(info.value.problems) >= 5

    def test_overrides(self):
        cfg = ExperimentConfig.from_dict({}, seed=7, paths=123)
        assert cfg.raw["monte_carlo"]["master_seed"] == 7
        assert cfg.raw["monte_carlo"]["n_paths"] == 123
        assert cfg.raw["random_field"]["n_samples"] == 123

    def test_hash_depends_on_content_only(self):
        a = ExperimentConfig.from_dict({"grid": {"N": 64, "L": 20.0}})
        b = ExperimentConfig.from_dict({"grid": {"L": 20.0, "N": 64}})
        c = ExperimentConfig.from_dict({"grid": {"N": 128}})
        assert a.hash == b.hash != c.hash

    def test_unresolvable_kernel_is_config_problem(self):
        with pytest.raises(ConfigurationError) as info:
            ExperimentConfig.from_dict({"grid": {"N": 16}, "kernels": {"a_plus": {"profile": "gaussian", "sigma": 0.5}}})
        assert any("a_plus" in p for p in info.value.problems)

    def test_field_sources(self, tmp_path):
        g = Grid(1, 20.0, 64)
        vals = np.linspace(0.5, 1.5, 64)
        write_binary(Field(g, vals), tmp_path / "u0.bin")
        cfg = ExperimentConfig.from_dict({}, base_dir=tmp_path)
        assert np.array_equal(cfg.build_field({"kind": "file", "path": "u0.bin"}).values, vals)
        assert np.all(cfg.build_field({"kind": "constant", "value": 0.3}).values == 0.3)
        cos = cfg.build_field({"kind": "cosine", "mean": 1.0, "amplitude": 0.5, "mode": 2})
        assert cos.values[0] == 1.5 and cos.values[16] == pytest.approx(0.5)

    def test_closed_form_check(self):
        rep = closed_form_check(ExperimentConfig.from_dict({}), 0.5)
        assert rep["passed"]


class TestRunExperiment:
    def test_config_error_exit_code(self, tmp_path, caplog):
        p = write_config(tmp_path, {"grid": {"N": 3}, "model": {"kappa_plus": -1}})
        with caplog.at_level(logging.ERROR, logger="nonlocal_fk"):
            code, run_dir = run_experiment("solve", p, tmp_path / "runs")
        assert code == 2 and run_dir is None
        assert "grid" in caplog.text and "kappa_plus" in caplog.text

    def test_unreadable_config(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        assert run_experiment("solve", p, tmp_path / "runs")[0] == 2

    def test_assumptions_equal_kernels(self, tmp_path):
        code, run_dir = run_experiment("assumptions", None, tmp_path)
        rep = load_report(run_dir)
        assert code == 0 and rep["results"]["all_nonneg"]
        assert rep["derived"]["theta"] == 1.0
        assert (run_dir / "assumptions.csv").exists()

    def test_assumptions_narrow_competition(self, tmp_path):
        code, run_dir = run_experiment("assumptions", CONFIGS / "narrow_competition.json", tmp_path)
        rep = load_report(run_dir)
        assert code == 1 and rep["status"] == "violation"
        assert rep["results"]["first_failing_kappa"] is not None

    @pytest.mark.parametrize("sub", ["stability", "random-field", "fk-verify"])
    def test_dependent_experiments_abort(self, tmp_path, sub):
        code, run_dir = run_experiment(sub, CONFIGS / "narrow_competition.json", tmp_path, paths=200)
        rep = load_report(run_dir)
        assert code == 1 and rep["status"] == "assumption_violated"
        assert rep["violated_assumption"] == "J_kappa >= 0 with kappa = theta"

    def test_solve_stationary(self, tmp_path):
        code, run_dir = run_experiment("solve", CONFIGS / "stationary.json", tmp_path)
        rep = load_report(run_dir)
        assert code == 0 and rep["results"]["flags"] == ["stationary"]
        norms = read_table(run_dir / "norms.csv")
        assert np.all(norms["deviation"] == 0.0)
        assert (run_dir / "solution" / "manifest.json").exists()

    def test_numerical_failure(self, tmp_path):
        p = write_config(tmp_path, {"solver": {"T": 1.0, "dt": 0.5, "store_every": 1}})
        code, run_dir = run_experiment("solve", p, tmp_path / "runs")
        rep = load_report(run_dir)
        assert code == 3 and rep["status"] == "numerical_failure" and "StepSizeError" in rep["error"]

    def test_fk_verify_benchmark(self, tmp_path):
        code, run_dir = run_experiment("fk-verify", CONFIGS / "benchmark.json", tmp_path)
        rep = load_report(run_dir)
        assert code == 0, rep["results"]
        assert rep["results"]["triangle"]["estimate"]["n_paths"] == 10_000

    def test_provenance(self, tmp_path):
        _, run_dir = run_experiment("taylor", CONFIGS / "benchmark.json", tmp_path)
        rep = load_report(run_dir)
        cfg = ExperimentConfig.load(CONFIGS / "benchmark.json")
        assert rep["config_hash"] == cfg.hash
        assert {"theta", "beta", "gamma"} <= set(rep["derived"])
        assert "assumption_checks" in rep

    def test_deterministic_reports(self, tmp_path):
        reports = []
        for out in ("a", "b"):
            _, run_dir = run_experiment("fk-verify", None, tmp_path / out, seed=99, paths=500)
            rep = load_report(run_dir)
            rep.pop("timestamp")
            reports.append(json.dumps(rep, sort_keys=True))
        assert reports[0] == reports[1]

    def test_run_dirs_never_overwritten(self, tmp_path):
        now = dt.datetime(2024, 1, 1, tzinfo=dt.timezone.utc)
        a, _ = make_run_dir(tmp_path, "solve", now)
        b, _ = make_run_dir(tmp_path, "solve", now)
        assert a != b and a.exists() and b.exists()


class TestPlotData:
    def test_stability_bundle(self, tmp_path):
        _, run_dir = run_experiment("stability", None, tmp_path)
        files = {f.name for f in emit_plotdata(run_dir)}
        assert {"stability_plot.csv", "norms_plot.csv"} <= files
        header = (run_dir / "stability_plot.csv").read_text().splitlines()[0]
        assert header == "t,log_norm,envelope_low,envelope_high"

    def test_taylor_bundle(self, tmp_path):
        _, run_dir = run_experiment("taylor", None, tmp_path)
        emit_plotdata(run_dir)
        table = read_table(run_dir / "taylor_plot.csv")
        assert np.all(table["observed"] <= table["bound"] + 1e-3)

    def test_random_field_bundle(self, tmp_path):
        _, run_dir = run_experiment("random-field", None, tmp_path, paths=500)
        files = {f.name for f in emit_plotdata(run_dir)}
        assert {"random_field_plot.csv", "exponent_plot.csv"} <= files

    def test_empty_directory_warns(self, tmp_path):
        with pytest.warns(UserWarning, match="report.json"):
            assert emit_plotdata(tmp_path) == []


class TestMain:
    def test_main_runs_and_prints_dir(self, tmp_path, capsys):
        code = main(["assumptions", "--out", str(tmp_path)])
        assert code == 0
        assert Path(capsys.readouterr().out.strip()).exists()

    def test_main_quiet_and_seed(self, tmp_path, capsys):
        code = main(["fk-verify", "--out", str(tmp_path), "--seed", "5", "--paths", "300", "--quiet"])
        assert capsys.readouterr().out == ""
        run_dir = next(tmp_path.iterdir())
        rep = load_report(run_dir)
        assert rep["config"]["monte_carlo"]["master_seed"] == 5
        assert code in (0, 1)

    def test_main_plotdata(self, tmp_path):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert main(["plotdata", str(tmp_path), "--quiet"]) == 0

    def test_main_config_error(self, tmp_path):
        p = write_config(tmp_path, {"grid": {"N": 3}})
        assert main(["solve", "--config", str(p), "--out", str(tmp_path / "r"), "--quiet"]) == 2
