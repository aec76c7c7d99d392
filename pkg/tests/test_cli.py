"""CLI subcommands: outputs, provenance headers, exit codes, determinism."""

import filecmp
import json
import os
import shutil
import subprocess
import sys

import pytest

from catesuite.cli import COMMANDS, main

CONFIG_TEMPLATE = """
[input]
path = "{root}/sim/data.csv"
outcome = "y"
treatment = "z"
cluster = "cluster"
unit_id = "unit_id"

[output]
dir = "{root}/out"

[run]
seed = 7
B = 150

[suite]
estimators = ["T_gbt_nocluster", "S_gbt_nocluster", "MO_gbt_cluster", "R_gbt_nocluster", "CF_forest_nocluster"]

[suite.base.gbt]
n_rounds = 15

[suite.cf]
n_trees = 10

[fit]
estimator = "T_gbt_nocluster"

[ate]
sensitivity = true

[pdp]
features = ["x1"]
points = 5
bins = 6
estimators = ["T_gbt_nocluster", "MO_gbt_cluster"]

[subgroup]
estimator = "AIPW"

[[subgroup.hypothesis]]
label = "low x1"
conditions = [["x1", "<=", 0.0]]

[simulate]
dgp = "constant_effect"
n = 300
seed = 3
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Config + simulated input shared by every CLI test in this module."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "run.toml"
    cfg_path.write_text(CONFIG_TEMPLATE.format(root=root))
    assert main(["simulate", "--config", str(cfg_path), "--out", str(root / "sim")]) == 0
    return root, str(cfg_path)


def run_cli(*args):
    """Run in-process; returns (exit code, stdout, stderr) via capsys-free pipes."""
    return main(list(args))


def test_simulate_outputs(workspace, capsys):
    root, cfg = workspace
    data = root / "sim" / "data.csv"
    truth = root / "sim" / "truth.csv"
    assert data.exists() and truth.exists()
    header = data.read_text().splitlines()
    assert header[0].startswith("#")
    assert "config_sha256=" in header[0] and "seed=7" in header[0]
    assert header[1].split(",") == ["unit_id", "x1", "x2", "x3", "x4", "cluster", "z", "y"]
    assert len(header) == 2 + 300
    t_lines = truth.read_text().splitlines()
    assert t_lines[1] == "unit_id,true_tau,true_e"
    assert len(t_lines) == 2 + 300


def test_fit_writes_cate_and_summary(workspace, capsys):
    root, cfg = workspace
    out = str(root / "out_fit")
    assert run_cli("fit", "--config", cfg, "--out", out) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("fit: T_gbt_nocluster")
    lines = open(os.path.join(out, "cate_fit.csv")).read().splitlines()
    assert lines[1] == "unit_id,cate"
    assert len(lines) == 2 + 300
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["estimator"] == "T_gbt_nocluster"
    assert {"mean", "std", "min", "max"} <= set(summary["cate"])
    assert summary["config_sha256"] and summary["seed"] == 7


def test_ate_reports_four_estimators_and_sensitivity(workspace, capsys):
    root, cfg = workspace
    out = str(root / "out_ate")
    assert run_cli("ate", "--config", cfg, "--out", out) == 0
    summary = json.load(open(os.path.join(out, "ate.json")))
    assert [e["tag"] for e in summary["estimates"]] == ["IPW", "REG", "AIPW", "MATCH"]
    for e in summary["estimates"]:
        assert e["ci_lo"] <= e["point"] <= e["ci_hi"]
    assert summary["overlap"]["n_flagged"] >= 0
    assert "gamma_star" in summary["sensitivity"]
    assert os.path.exists(os.path.join(out, "sensitivity.csv"))
    assert summary["n"] == 300


def test_ate_estimator_subset_and_unknown(workspace, tmp_path, capsys):
    root, cfg = workspace
    sub_cfg = tmp_path / "sub.toml"
    base = open(cfg).read().replace("sensitivity = true", 'estimators = ["REG", "AIPW"]')
    sub_cfg.write_text(base)
    out = str(tmp_path / "out")
    assert run_cli("ate", "--config", str(sub_cfg), "--out", out) == 0
    summary = json.load(open(os.path.join(out, "ate.json")))
    assert [e["tag"] for e in summary["estimates"]] == ["REG", "AIPW"]
    bad_cfg = tmp_path / "bad.toml"
    bad_cfg.write_text(open(cfg).read().replace("sensitivity = true", 'estimators = ["OLS"]'))
    assert run_cli("ate", "--config", str(bad_cfg), "--out", out) == 1
    assert "unknown estimator" in capsys.readouterr().err


def test_stability_outputs(workspace, capsys):
    root, cfg = workspace
    out = str(root / "out_stability")
    assert run_cli("stability", "--config", cfg, "--out", out) == 0
    mat = open(os.path.join(out, "cate_matrix.csv")).read().splitlines()
    assert mat[1].split(",")[0] == "unit_id"
    assert len(mat[1].split(",")) == 1 + 5  # unit_id + one column per estimator
    assert len(mat) == 2 + 300
    rep = open(os.path.join(out, "stability_report.csv")).read().splitlines()
    assert rep[1] == "unit_id,median,min,max,spread,std,sign_agreement,stable"
    dec = open(os.path.join(out, "decisions.csv")).read().splitlines()
    assert dec[1] == "unit_id,decision,min,max"
    assert {r.split(",")[1] for r in dec[2:]} <= {"treat", "withhold", "abstain"}
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert len(summary["estimators"]) == 5
    assert summary["failures"] == {}
    assert summary["policy"]["counts"].keys() == {"treat", "withhold", "abstain"}


def test_pdp_curve_table(workspace, capsys):
    root, cfg = workspace
    out = str(root / "out_pdp")
    assert run_cli("pdp", "--config", cfg, "--out", out) == 0
    lines = open(os.path.join(out, "curves.csv")).read().splitlines()
    assert lines[1] == "feature,grid_value,estimator,value,kind"
    rows = [l.split(",") for l in lines[2:]]
    assert {r[0] for r in rows} == {"x1"}
    assert {r[2] for r in rows} == {"T_gbt_nocluster", "MO_gbt_cluster"}
    assert {r[4] for r in rows} == {"marginal", "pdp"}


def test_subgroup_outputs(workspace, capsys):
    root, cfg = workspace
    out = str(root / "out_subgroup")
    assert run_cli("subgroup", "--config", cfg, "--out", out) == 0
    summary = json.load(open(os.path.join(out, "subgroup.json")))
    assert summary["estimator"] == "AIPW"
    (res,) = summary["results"]
    assert res["label"] == "low x1"
    assert 0.0 <= res["p_value"] <= 1.0
    assert res["subgroup"]["diagnostics"]["side"] == "S"


def test_byte_reproducible_across_thread_counts(workspace):
    """Same config + seed must give byte-identical files at any --threads."""
    root, cfg = workspace
    env = dict(os.environ, PYTHONPATH=os.pathsep.join(sys.path))
    for threads, out in (("1", root / "t1"), ("8", root / "t8")):
        r = subprocess.run(
            [sys.executable, "-m", "catesuite.cli", "stability", "--config", cfg,
             "--threads", threads, "--out", str(out)],
            capture_output=True, text=True, env=env,
        )
        assert r.returncode == 0, r.stderr
    for name in ("cate_matrix.csv", "stability_report.csv", "decisions.csv", "summary.json"):
        assert filecmp.cmp(root / "t1" / name, root / "t8" / name, shallow=False), name


def test_seed_override_changes_results(workspace, capsys):
    root, cfg = workspace
    assert run_cli("stability", "--config", cfg, "--threads", "1", "--out", str(root / "s7")) == 0
    assert run_cli("stability", "--config", cfg, "--seed", "99", "--out", str(root / "s99")) == 0
    assert not filecmp.cmp(root / "s7" / "cate_matrix.csv", root / "s99" / "cate_matrix.csv", shallow=False)
    assert "seed=99" in open(root / "s99" / "cate_matrix.csv").readline()


def test_exit_codes(workspace, tmp_path, capsys):
    root, cfg = workspace
    assert run_cli("nope", "--config", cfg) == 1  # unknown subcommand
    assert run_cli("ate", "--bogus-flag") == 1  # unknown flag
    assert run_cli("--help") == 0
    assert run_cli("ate", "--config", str(tmp_path / "missing.toml")) == 1
    capsys.readouterr()
    bad = tmp_path / "bad.toml"
    bad.write_text('[input]\npath = "nope.csv"\noutcome = "y"\ntreatment = "z"\n')
    assert run_cli("ate", "--config", str(bad)) == 1  # validation error
    assert "error:" in capsys.readouterr().err


def test_internal_error_exits_2(workspace, monkeypatch, capsys):
    root, cfg = workspace

    def boom(cfg_, outdir):
        raise RuntimeError("wires crossed")

    monkeypatch.setitem(COMMANDS, "ate", (boom, "broken"))
    assert run_cli("ate", "--config", cfg) == 2
    assert "internal error" in capsys.readouterr().err


def test_console_script_installed():
    exe = shutil.which("catesuite")
    assert exe, "console script 'catesuite' not on PATH"
    r = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for name in COMMANDS:
        assert name in r.stdout
