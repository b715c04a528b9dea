import csv
import hashlib
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from qrconnect import cli
from qrconnect.config import SEED_ENV


def run(tmp_path, *argv, out="out"):
    out_dir = tmp_path / out
    code = cli.main([*argv, "--out-dir", str(out_dir)])
    return code, out_dir


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


SMALL = {"sim": {"rounds": 2000, "p_values": [0.002, 0.006]}}


class TestAnalytic:
    def test_table_grid(self, tmp_path):
        code, out = run(tmp_path, "analytic")
        assert code == 0
        rows = read_csv(out / "analytic.csv")
        assert list(rows[0]) == list(cli.ANALYTIC_COLUMNS)
        storage = [float(r["mean_storage_us"]) for r in rows]
        reference = [462, 377, 309, 255, 212, 181, 156, 136]
        np.testing.assert_allclose(storage, reference, rtol=0.02)
        assert (out / "analytic.columns.txt").read_text().startswith("p: ")

    def test_single_point_c(self, tmp_path):
        code, out = run(tmp_path, "analytic", "--config", write_config(tmp_path, {"sim": {"p_values": [0.01]}}))
        assert code == 0
        (row,) = read_csv(out / "analytic.csv")
        assert float(row["C"]) == pytest.approx(1.08, abs=0.01)

    def test_empty_grid(self, tmp_path, capsys):
        code, out = run(tmp_path, "analytic", "--config", write_config(tmp_path, {"sim": {"p_values": []}}))
        assert code == 2
        assert not out.exists()
        assert "p grid is empty" in capsys.readouterr().err

    def test_schema_violation(self, tmp_path, capsys):
        code, out = run(tmp_path, "analytic", "--config", write_config(tmp_path, {"params": {"n": "big"}}))
        assert code == 2 and not out.exists()
        assert "params.n" in capsys.readouterr().err

    def test_json_error_has_line(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{\n"params": {\n"n": ,\n}}')
        code, _ = run(tmp_path, "analytic", "--config", str(path))
        assert code == 2 and "line 3" in capsys.readouterr().err

    def test_csv_format(self, tmp_path):
        _, out = run(tmp_path, "analytic")
        raw = (out / "analytic.csv").read_bytes()
        assert b"\r" not in raw and raw.endswith(b"\n")
        # floats round-trip exactly through the text
        row = read_csv(out / "analytic.csv")[0]
        assert repr(float(row["C"])) == row["C"]


class TestSimulate:
    def test_outputs_and_histograms(self, tmp_path):
        code, out = run(tmp_path, "simulate", "--rounds", "3000", "--seed", "5",
                        "--config", write_config(tmp_path, {"params": {"p": 0.004}}))
        assert code == 0
        (row,) = read_csv(out / "stats.csv")
        assert row["mode"] == "memory" and int(row["rounds"]) == 3000
        hists = sorted(p.name for p in (out / "hist").glob("*.csv"))
        assert hists == sorted(f"p0.004_memory_{n}.csv" for n in
                               ("step1_trials", "step2_trials", "repetitions", "storage_time_us",
                                "time_cost_us"))
        for name in hists:
            counts = [int(r["count"]) for r in read_csv(out / "hist" / name)]
            assert sum(counts) == 3000

    def test_both_mode_has_ratio(self, tmp_path):
        code, out = run(tmp_path, "simulate", "--mode", "both", "--rounds", "3000")
        assert code == 0
        (row,) = read_csv(out / "compare.csv")
        assert float(row["ratio"]) > 100
        assert float(row["acceleration_analytic"]) == pytest.approx(353.3, abs=0.1)

    def test_budget_exhausted(self, tmp_path, capsys):
        code, out = run(tmp_path, "simulate", "--config",
                        write_config(tmp_path, {"sim": {"max_time": 1e-6}}))
        assert code == 3
        (row,) = read_csv(out / "stats.csv")
        assert row["rounds"] == "0"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["exit_code"] == 3
        assert "no successful round" in capsys.readouterr().err

    def test_invalid_rounds(self, tmp_path):
        code, out = run(tmp_path, "simulate", "--rounds", "0")
        assert code == 2 and not out.exists()

    def test_verbose_trace(self, tmp_path):
        code, out = run(tmp_path, "simulate", "--rounds", "5", "--verbose")
        assert code == 0
        events = [json.loads(line) for line in (out / "trace.jsonl").read_text().splitlines()]
        assert events and {"event", "time", "round"} == set(events[0])


class TestSweep:
    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        _, a = run(tmp_path, "sweep", "--config", cfg, "--seed", "3", out="a")
        _, b = run(tmp_path, "sweep", "--config", cfg, "--seed", "3", out="b")
        assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
        _, c = run(tmp_path, "sweep", "--config", cfg, "--seed", "4", out="c")
        assert (a / "sweep.csv").read_bytes() != (c / "sweep.csv").read_bytes()

    def test_manifest_reproduces_outputs(self, tmp_path):
        _, a = run(tmp_path, "sweep", "--config", write_config(tmp_path, SMALL), "--mode", "both",
                   "--seed", "8", out="a")
        manifest = json.loads((a / "manifest.json").read_text())
        for name, digest in manifest["outputs"].items():
            assert hashlib.sha256((a / name).read_bytes()).hexdigest() == digest
        assert manifest["master_seed"] == 8 and manifest["version"]
        assert manifest["started"] <= manifest["finished"]
        code, b = run(tmp_path, "sweep", "--config", str(a / "manifest.json"), out="b")
        assert code == 0
        assert json.loads((b / "manifest.json").read_text())["outputs"] == manifest["outputs"]

    def test_seed_precedence(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path, {**SMALL, "sim": {**SMALL["sim"], "master_seed": 1}})
        _, base = run(tmp_path, "sweep", "--config", cfg, out="cfg")
        monkeypatch.setenv(SEED_ENV, "2")
        _, env = run(tmp_path, "sweep", "--config", cfg, out="env")
        _, flag = run(tmp_path, "sweep", "--config", cfg, "--seed", "1", out="flag")
        seeds = [json.loads((d / "manifest.json").read_text())["master_seed"] for d in (base, env, flag)]
        assert seeds == [1, 2, 1]
        assert (base / "sweep.csv").read_bytes() == (flag / "sweep.csv").read_bytes()
        monkeypatch.delenv(SEED_ENV)
        _, default = run(tmp_path, "sweep", "--config", write_config(tmp_path, SMALL, "plain.json"), out="d")
        assert json.loads((default / "manifest.json").read_text())["master_seed"] == 0

    def test_bad_env_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "abc")
        code, _ = run(tmp_path, "sweep")
        assert code == 2


class TestCompare:
    def test_compare_writes_analytic_and_ratio(self, tmp_path):
        code, out = run(tmp_path, "compare", "--rounds", "1000", "--config",
                        write_config(tmp_path, {"sim": {"p_values": [0.001]}}))
        assert code == 0
        assert (out / "analytic.csv").exists() and (out / "compare.csv").exists()
        modes = [r["mode"] for r in read_csv(out / "sweep.csv")]
        assert modes == ["memory", "no-memory"]


class TestTomo:
    def test_synthesized_phi_plus(self, tmp_path):
        code, out = run(tmp_path, "tomo", "--synthesize", "phi+", "--n-expected", "1e5")
        assert code == 0
        report = json.loads((out / "tomo_report.json").read_text())
        assert report["fidelity"] >= 0.999 and report["converged"]
        rho = np.array(report["rho_real"]) + 1j * np.array(report["rho_imag"])
        assert rho.shape == (4, 4) and abs(np.trace(rho) - 1) < 1e-12

    def test_default_dephased_state(self, tmp_path):
        code, out = run(tmp_path, "tomo", "--seed", "2")
        report = json.loads((out / "tomo_report.json").read_text())
        assert code == 0
        assert abs(report["fidelity"] - 0.8) <= 3 * report["fidelity_std"]
        assert report["total_counts"] == pytest.approx(656, rel=0.15)
        assert (out / "counts.txt").exists()

    def test_counts_file(self, tmp_path):
        _, first = run(tmp_path, "tomo", "--synthesize", "werner:0.2", out="first")
        code, out = run(tmp_path, "tomo", "--counts", str(first / "counts.txt"), out="second")
        assert code == 0
        a = json.loads((first / "tomo_report.json").read_text())
        b = json.loads((out / "tomo_report.json").read_text())
        assert a["fidelity"] == b["fidelity"]

    def test_malformed_token(self, tmp_path, capsys):
        path = tmp_path / "c.txt"
        path.write_text("H H 5\nH Z 3\n")
        code, out = run(tmp_path, "tomo", "--counts", str(path))
        assert code == 2
        assert "'Z'" in capsys.readouterr().err
        assert not (out / "tomo_report.json").exists()

    def test_bad_synthesis_spec(self, tmp_path):
        code, _ = run(tmp_path, "tomo", "--synthesize", "werner:two")
        assert code == 2

    def test_non_convergence(self, tmp_path):
        code, out = run(tmp_path, "tomo", "--config", write_config(tmp_path, {"tomo": {"max_iter": 2}}))
        assert code == 4
        assert json.loads((out / "tomo_report.json").read_text())["converged"] is False

    @pytest.mark.parametrize("spec", ["phi+", "mixed", "werner:0.4", "dephased:0.8", "dephased:0.8:337.5",
                                      "atom-photon:120"])
    def test_synthesis_specs(self, spec):
        rho = cli.synthesize_state(spec)
        assert rho.labels == ("S1", "S4")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qrconnect", "analytic", "--out-dir", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "analytic.csv").exists()
