import json
import os
import subprocess
import sys

import pytest

from eqvi.cli import main
from eqvi.config import shipped_instance_path


def run_cli(args, out):
    return main(args + ["--out", str(out)])


def test_solve_demo_a(tmp_path):
    code = run_cli(["solve", "--config", shipped_instance_path("demo-a")], tmp_path)
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["converged"] is True
    assert report["audit"]["ok"] is True
    assert report["smallness"]["ok"] is True
    assert (tmp_path / "solution.csv").exists()
    assert (tmp_path / "xi.csv").exists()
    header = (tmp_path / "solution.csv").read_text().splitlines()[0]
    assert header == "t,x,value"


def test_refusal_exit_code_and_message(tmp_path, capsys):
    code = run_cli(["solve", "--config", shipped_instance_path("refusal")], tmp_path)
    assert code == 3
    err = capsys.readouterr().err
    assert "smallness" in err
    assert "coercivity_coef" in err and "trace_norm" in err


def test_refusal_force_flags_violation(tmp_path):
    cfgp = shipped_instance_path("refusal")
    code = main(["solve", "--config", cfgp, "--out", str(tmp_path), "--force",
                 "--tol", "1e-5"])
    assert code in (0, 2)
    report = json.loads((tmp_path / "report.json").read_text())
    assert any("smallness" in w for w in report["warnings"])


def test_malformed_config_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  \"grid\": {\n")
    code = run_cli(["solve", "--config", str(bad)], tmp_path)
    assert code == 1
    err = capsys.readouterr().err
    assert "bad.json:" in err  # line-anchored message

    missing = tmp_path / "missing.json"
    missing.write_text("{}")
    assert run_cli(["solve", "--config", str(missing)], tmp_path) == 1


def test_certify_demo(tmp_path):
    code = run_cli(["certify", "--config", shipped_instance_path("demo-a")], tmp_path)
    assert code == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["smallness_ok"] is True
    assert cert["state_bound"] > 0
    names = [t["name"] for t in cert["derivation"]]
    assert "state_bound" in names and "derivative_bound" in names
    for entry in cert["derivation"]:
        assert entry["formula"]


def test_certify_refusal_names_inequality(tmp_path):
    code = run_cli(["certify", "--config", shipped_instance_path("refusal")], tmp_path)
    assert code == 3
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["smallness_ok"] is False
    assert "coercivity_coef" in cert["violated_inequality"]


def test_probe_multi_branch(tmp_path):
    code = main(["probe", "--config", shipped_instance_path("toy-qvi-05"),
                 "--out", str(tmp_path), "--starts", "5"])
    assert code == 0
    clusters = json.loads((tmp_path / "clusters.json").read_text())
    assert clusters["n_clusters"] == 3
    assert clusters["n_failed"] == 0


def test_probe_unique_cluster(tmp_path):
    code = main(["probe", "--config", shipped_instance_path("toy-qvi-14"),
                 "--out", str(tmp_path), "--starts", "4"])
    assert code == 0
    clusters = json.loads((tmp_path / "clusters.json").read_text())
    assert clusters["n_clusters"] == 1


def test_control_demo(tmp_path):
    code = main(["control", "--config", shipped_instance_path("control-demo"),
                 "--out", str(tmp_path), "--grid-res", "3"])
    assert code == 0
    best = json.loads((tmp_path / "best_triple.json").read_text())
    assert "e" in best and "truth" in best
    hist = (tmp_path / "control_history.csv").read_text().splitlines()
    assert hist[0] == "e,l0,E0,cost,converged"
    assert len(hist) == 1 + 27


def test_strict_mode_accepts_valid(tmp_path):
    code = main(["solve", "--config", shipped_instance_path("toy-qvi-00"),
                 "--out", str(tmp_path), "--strict"])
    assert code == 0


def test_determinism_byte_identical(tmp_path):
    env = dict(os.environ, EQVI_THREADS="0")
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        out.mkdir()
        subprocess.run(
            [sys.executable, "-m", "eqvi.cli", "probe",
             "--config", shipped_instance_path("toy-qvi-05"),
             "--out", str(out), "--seed", "11", "--starts", "5"],
            env=env, check=True, capture_output=True)
        outs.append((out / "clusters.json").read_bytes())
    assert outs[0] == outs[1]


def test_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "eqvi.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("solve", "certify", "probe", "control", "oracle-check"):
        assert sub in proc.stdout
