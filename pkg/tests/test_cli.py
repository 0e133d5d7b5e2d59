"""Command-line interface: flags, artifacts, exit codes."""

import json
import subprocess
import sys
from types import SimpleNamespace

import numpy as np
import pytest

import fwdvol.cli as cli
from fwdvol.errors import NumericalBlowup
from fwdvol.pricing import martingale_test

import oracles


def write_scenario(tmp_path, name="scenario.json", **raw):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


def small_scenario(tmp_path, **extra):
    raw = {"n_nodes": 17, "n_paths": 150, "seed": 9}
    raw.update(extra)
    return write_scenario(tmp_path, **raw)


class TestPrice:
    def test_prints_full_precision_price(self, capsys):
        rc = cli.main([
            "price", "--spot", "100", "--strike", "100",
            "--sigma", "0.2", "--tau", "1",
        ])
        assert rc == 0
        printed = float(capsys.readouterr().out.strip())
        assert printed == pytest.approx(
            oracles.BS_PRICES[(100.0, 0.2, 100.0, 1.0)], rel=1e-14
        )

    def test_bad_inputs_exit_2(self, capsys):
        rc = cli.main([
            "price", "--spot", "-5", "--strike", "100",
            "--sigma", "0.2", "--tau", "1",
        ])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "fwdvol.cli", "price", "--spot", "1",
             "--strike", "1", "--sigma", "0.2", "--tau", "1"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert float(proc.stdout.strip()) == pytest.approx(
            oracles.BS_PRICES[(1.0, 0.2, 1.0, 1.0)], rel=1e-14
        )


class TestSimulate:
    def test_writes_artifacts(self, tmp_path, capsys):
        scenario = small_scenario(
            tmp_path, volvol={"family": "family1"}, dump_paths=1
        )
        out = tmp_path / "run"
        rc = cli.main(["simulate", "--scenario", scenario, "--out", str(out)])
        assert rc == 0
        assert (out / "manifest.json").exists()
        assert (out / "stats.json").exists()
        assert (out / "paths" / "path-00000.csv").exists()
        stdout = capsys.readouterr().out
        assert "martingale checks: pass" in stdout
        assert "positivity: pass" in stdout

    def test_default_out_dir_is_hashed(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        scenario = small_scenario(tmp_path)
        rc = cli.main(["simulate", "--scenario", scenario, "--quiet"])
        assert rc == 0
        runs = list((tmp_path / "runs").iterdir())
        assert len(runs) == 1
        assert len(runs[0].name) == 12
        manifest = json.loads((runs[0] / "manifest.json").read_text())
        assert manifest["scenario_hash"].startswith(runs[0].name)

    def test_quiet_suppresses_stdout(self, tmp_path, capsys):
        scenario = small_scenario(tmp_path)
        rc = cli.main(["simulate", "--scenario", scenario,
                       "--out", str(tmp_path / "r"), "--quiet"])
        assert rc == 0
        assert capsys.readouterr().out == ""

    def test_overrides_reach_the_manifest(self, tmp_path):
        scenario = small_scenario(tmp_path)
        out = tmp_path / "r"
        rc = cli.main([
            "simulate", "--scenario", scenario, "--out", str(out),
            "--seed", "321", "--paths", "128", "--quiet",
        ])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["scenario"]["seed"] == 321
        assert manifest["scenario"]["n_paths"] == 128

    def test_unknown_scenario_key_exits_2(self, tmp_path, capsys):
        scenario = write_scenario(tmp_path, n_pathz=10)
        assert cli.main(["simulate", "--scenario", scenario]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_missing_scenario_file_exits_2(self, tmp_path, capsys):
        assert cli.main(["simulate", "--scenario", str(tmp_path / "nope.json")]) == 2
        assert "not found" in capsys.readouterr().err

    def test_nonpositive_initial_curve_exits_2(self, tmp_path, capsys):
        scenario = small_scenario(tmp_path, x0={"flat": 0.0})
        assert cli.main(["simulate", "--scenario", scenario]) == 2
        assert "strictly positive" in capsys.readouterr().err

    def test_diverged_paths_exit_3(self, tmp_path, monkeypatch, capsys):
        scenario = small_scenario(tmp_path)
        stub = SimpleNamespace(
            n_paths=150,
            stats=lambda: {"martingale_pass": True, "positivity": {"pass": True}},
            excluded_paths=lambda: [5, 9],
        )
        monkeypatch.setattr(cli, "run_ensemble", lambda params, workers: stub)
        monkeypatch.setattr(cli, "write_run", lambda result, out: {})
        rc = cli.main(["simulate", "--scenario", scenario,
                       "--out", str(tmp_path / "r")])
        assert rc == 3
        assert "diverged" in capsys.readouterr().out

    def test_blowup_exception_exits_3(self, tmp_path, monkeypatch, capsys):
        scenario = small_scenario(tmp_path)
        def boom(params, workers):
            raise NumericalBlowup("path 3 went non-finite", step=7, path=3)
        monkeypatch.setattr(cli, "run_ensemble", boom)
        rc = cli.main(["simulate", "--scenario", scenario])
        assert rc == 3
        assert "blow-up" in capsys.readouterr().err

    def test_missing_required_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["simulate"])
        assert exc.value.code == 2


class TestVerifyHypotheses:
    def test_shipped_family_passes(self, tmp_path, capsys):
        scenario = small_scenario(tmp_path, volvol={"family": "family2"})
        out = tmp_path / "v"
        rc = cli.main([
            "verify-hypotheses", "--scenario", scenario,
            "--samples", "500", "--out", str(out),
        ])
        assert rc == 0
        assert "all items pass" in capsys.readouterr().out
        report = json.loads((out / "validation.json").read_text())
        assert report["pass"] is True
        assert report["model"] == "TotalVarianceVolVol"
        assert report["n_samples"] == 500

    def test_inadmissible_model_fails_with_witness(self, tmp_path, capsys):
        scenario = small_scenario(tmp_path, volvol={"family": "adversarial"})
        out = tmp_path / "v"
        rc = cli.main([
            "verify-hypotheses", "--scenario", scenario,
            "--samples", "500", "--out", str(out),
        ])
        assert rc == 1
        stdout = capsys.readouterr().out
        assert "[FAIL] short_end_sign" in stdout
        assert "witness" in stdout
        report = json.loads((out / "validation.json").read_text())
        assert report["pass"] is False


class TestMartingaleTest:
    def test_passing_run(self, tmp_path, capsys):
        scenario = small_scenario(tmp_path)
        out = tmp_path / "m"
        rc = cli.main(["martingale-test", "--scenario", scenario,
                       "--out", str(out)])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "[ok  ] spot" in stdout
        report = json.loads((out / "martingale.json").read_text())
        assert report["pass"] is True
        lines = (out / "martingale.csv").read_text().strip().splitlines()
        assert lines[0] == "quantity,t,reference,mean,stderr,z,pass"
        assert len(lines) == len(report["tests"]) + 1

    def test_failing_report_exits_1(self, tmp_path, monkeypatch, capsys):
        scenario = small_scenario(tmp_path)
        rng = np.random.default_rng(0)
        biased = martingale_test(
            [("spot", 0.5, 105.0 + rng.standard_normal(500), 100.0)]
        )
        stub = SimpleNamespace(
            martingale_report=lambda: biased,
            excluded_paths=lambda: [],
        )
        monkeypatch.setattr(cli, "run_ensemble", lambda params, workers: stub)
        rc = cli.main(["martingale-test", "--scenario", scenario])
        assert rc == 1
        assert "[FAIL] spot" in capsys.readouterr().out


class TestConvergence:
    def test_writes_report(self, tmp_path, capsys):
        scenario = small_scenario(
            tmp_path,
            volvol={"family": "family1"},
            convergence={"dts": [0.125, 0.0625, 0.03125], "n_paths": 4},
        )
        out = tmp_path / "c"
        rc = cli.main(["convergence", "--scenario", scenario, "--out", str(out)])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "dt levels" in stdout
        assert "total-variance gap" in stdout
        report = json.loads((out / "convergence.json").read_text())
        assert report["dts"] == [0.125, 0.0625, 0.03125]
        assert report["n_paths"] == 4
        assert len(report["xi_gap"]) == 3

    def test_paths_flag_overrides_scenario(self, tmp_path, capsys):
        scenario = small_scenario(
            tmp_path, convergence={"dts": [0.25, 0.125, 0.0625], "n_paths": 8}
        )
        out = tmp_path / "c"
        rc = cli.main(["convergence", "--scenario", scenario,
                       "--out", str(out), "--paths", "2", "--quiet"])
        assert rc == 0
        report = json.loads((out / "convergence.json").read_text())
        assert report["n_paths"] == 2
