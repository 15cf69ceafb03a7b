import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import statsmodels.api as sm

from reqiv import cli, panel, selectmod
from reqiv.numkit import OptimizerSettings


def run(tmp, *argv):
    return cli.run(list(argv) + ["--output-dir", str(tmp)])


def read(tmp, name):
    return pd.read_csv(Path(tmp) / name)


@pytest.fixture(scope="module")
def nct_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("nct")
    assert run(d, "synth-nct", "--rounding-seed", "0") == 0
    assert run(d, "build-panel", "--contacts", str(d / "nct" / "contacts_employed_before.csv"),
               "--out", "emp.csv") == 0
    assert run(d, "build-panel", "--contacts", str(d / "nct" / "contacts_earnings_before.csv"),
               "--out", "earn.csv") == 0
    return d


# ---------------------------------------------------------------- subcommands


def test_fixture_panel_and_propensities(tmp_path):
    assert run(tmp_path, "build-panel", "--fixture", "2016F") == 0
    assert run(tmp_path, "lar", "--panel", str(tmp_path / "panel.csv"), "--steps-out", "steps.csv") == 0
    lar = read(tmp_path, "lar.csv")
    assert lar["p_r"].round(2).tolist() == [0.11, 0.17, 0.19]
    assert (tmp_path / "lar.csv.meta.json").exists() and (tmp_path / "steps.csv").exists()
    rates = read(tmp_path, "panel.rates.csv")
    assert len(rates) > 0


def test_synth_nct_outputs(nct_dir):
    files = sorted(p.name for p in (nct_dir / "nct").iterdir() if p.suffix == ".csv")
    assert "ground_truth.csv" in files and "achieved_moments.csv" in files
    assert sum(f.startswith("contacts_") for f in files) == 6
    truth = read(nct_dir / "nct", "ground_truth.csv")
    assert truth["ground_truth_mean"].tolist() == [3095, 2981, 0.148, 0.567, 0.494, 0.091]
    meta = json.loads((nct_dir / "nct" / "ground_truth.csv.meta.json").read_text())
    assert meta["seeds"] == {"nct-rounding": 0} and meta["version"]


def test_lar_on_rebuilt_survey(nct_dir):
    assert run(nct_dir, "lar", "--panel", str(nct_dir / "earn.csv"), "--pairs", "2:1", "--out", "l.csv") == 0
    assert read(nct_dir, "l.csv")["lar"].iloc[0] == pytest.approx(3244, abs=0.5)


def test_fit_with_zero_correlation_is_plain_probit(nct_dir):
    assert run(nct_dir, "fit", "--panel", str(nct_dir / "emp.csv"), "--kind", "binary", "--rho", "0",
               "--sample-rule", "final_request_only", "--out", "p0.csv", "--fit-file", "f0.json") == 0
    rows = panel.read_panel_csv(nct_dir / "emp.csv")
    fin = panel.final_request_rows(rows.loc[rows["R"] >= 1])
    resp = fin.loc[fin["S_hat"] == 1, "Y_hat"].to_numpy()
    oracle = sm.Probit(resp, np.ones((len(resp), 1))).fit(disp=0, tol=1e-12).params[0]
    params = read(nct_dir, "p0.csv")
    assert params["estimate"].iloc[0] == pytest.approx(oracle, abs=1e-8)


def test_fit_curve_and_overid(nct_dir):
    assert run(nct_dir, "fit", "--panel", str(nct_dir / "emp.csv"), "--kind", "binary", "--z", "R_eq_2",
               "--out", "p.csv", "--fit-file", "f.json") == 0
    fit = selectmod.SelectionFit.from_dict(json.loads((nct_dir / "f.json").read_text()))
    assert fit.converged and fit.z_names[-1] == "R_eq_2"
    assert run(nct_dir, "msr-curve", "--fit-file", str(nct_dir / "f.json"), "--panel", str(nct_dir / "emp.csv"),
               "--grid-size", "8", "--segments-out", "seg.csv") == 0
    curve = read(nct_dir, "msr.csv")
    assert len(curve) == 8 and list(curve.columns) == ["u", "m", "ci_low", "ci_high"]
    assert len(read(nct_dir, "seg.csv")) == 2
    # with two request levels, at most zero can be tested
    assert run(nct_dir, "overid", "--panel", str(nct_dir / "emp.csv"), "--kind", "binary", "--z", "R_eq_2",
               "--tested", "2") == 1


def test_overid_on_simulated_contacts(tmp_path):
    assert run(tmp_path, "simulate", "--set", "n_subjects=6000", "--set", "propensities=0.2,0.3,0.4",
               "--set", "beta=0.1", "--set", "rho=0.4", "--set", "seed=3") == 0
    truth = read(tmp_path, "sim_truth.csv")
    assert len(truth) == 6 and {"complier_mean", "complier_mean_sample"} <= set(truth.columns)
    assert run(tmp_path, "build-panel", "--contacts", str(tmp_path / "sim_contacts.csv")) == 0
    assert run(tmp_path, "overid", "--panel", str(tmp_path / "panel.csv"), "--kind", "binary",
               "--z", "R_eq_2,R_eq_3", "--tested", "3") == 0
    tests = read(tmp_path, "overid_tests.csv")
    assert tests["df"].tolist() == [1, 1] and 0 <= tests["p"].iloc[0] <= 1
    assert read(tmp_path, "overid.csv")["request"].tolist() == [3]


def test_decompose_table1_fixture(tmp_path):
    assert run(tmp_path, "build-panel", "--fixture", "table1", "--max-r", "2") == 0
    rows = panel.read_panel_csv(tmp_path / "panel.csv")
    rows["gender"] = np.where(rows["female"] == 1.0, "women", "men")
    panel.write_panel_csv(rows, tmp_path / "panel_g.csv")
    assert run(tmp_path, "fit", "--panel", str(tmp_path / "panel_g.csv"), "--kind", "binary", "--z", "R_eq_2",
               "--group-column", "gender", "--fit-file", "g.json") == 0
    assert run(tmp_path, "decompose", "--fit-file", str(tmp_path / "g.json"), "--panel",
               str(tmp_path / "panel_g.csv"), "--se", "delta") == 0
    rep = read(tmp_path, "decomposition.csv")
    gap = rep.loc[rep["item"] == "outcome", "gap"].iloc[0]
    assert gap == pytest.approx(0.12, abs=0.02)
    meta = json.loads((tmp_path / "decomposition.csv.meta.json").read_text())
    assert meta["se_method"] == "delta"


def test_reproduce_nct_smoke(tmp_path):
    assert run(tmp_path, "reproduce-nct", "--replicates", "10", "--bootstrap-seed", "1") == 0
    rep = read(tmp_path, "nct_report.csv")
    assert rep["variable"].tolist()[0] == "earnings_before"
    assert rep["mle"].iloc[0] == pytest.approx(3197, rel=0.015)


# ---------------------------------------------------------------- exit codes and config


def test_usage_errors(tmp_path, capsys):
    assert cli.run(["no-such-command"]) == 1
    assert run(tmp_path, "lar", "--bogus") == 1
    assert run(tmp_path, "build-panel") == 1
    assert run(tmp_path, "lar", "--panel", str(tmp_path / "missing.csv")) == 1
    assert run(tmp_path, "simulate", "--set", "propensities=0.2") == 1
    assert run(tmp_path, "simulate", "--set", "n_subjects=5", "--set", "propensities=0.2",
               "--set", "colour=red") == 1
    assert run(tmp_path, "simulate", "--set", "n_subjects") == 1
    err = capsys.readouterr().err
    assert "error:" in err


def test_malformed_contacts_report_the_line(tmp_path, capsys):
    bad = tmp_path / "c.csv"
    assert run(tmp_path, "build-panel", "--fixture", "2015F", "--out", "ok.csv") == 0
    bad.write_text("subject_id,term_id\nx,y\n")
    assert run(tmp_path, "build-panel", "--contacts", str(bad)) == 1
    assert "line" in capsys.readouterr().err


def test_nonconvergence_exit_code(nct_dir, monkeypatch):
    real = selectmod.maximize
    monkeypatch.setattr(selectmod, "maximize",
                        lambda f, x0, settings, grad: real(f, x0, OptimizerSettings(max_iterations=1), grad,
                                                           polish=False))
    with pytest.warns(UserWarning):
        code = run(nct_dir, "fit", "--panel", str(nct_dir / "earn.csv"), "--kind", "continuous",
                   "--z", "R_eq_2", "--out", "nc.csv", "--fit-file", "nc.json")
    assert code == 2


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# fixture run\nfixture = 2016F\nfixture_size = 200\nout = from_config.csv\n")
    assert run(tmp_path, "build-panel", "--config", str(cfg)) == 0
    assert len(panel.read_panel_csv(tmp_path / "from_config.csv")) == 800
    assert run(tmp_path, "build-panel", "--config", str(cfg), "--fixture-size", "100") == 0
    assert len(panel.read_panel_csv(tmp_path / "from_config.csv")) == 400
    cfg.write_text("nonsense_key = 1\n")
    assert run(tmp_path, "build-panel", "--config", str(cfg)) == 1
    cfg.write_text("fixture\n")
    assert run(tmp_path, "build-panel", "--config", str(cfg)) == 1


def test_derived_seeds_are_labelled():
    assert cli.derive_seed(0, "a") == cli.derive_seed(0, "a")
    assert cli.derive_seed(0, "a") != cli.derive_seed(0, "b") != cli.derive_seed(1, "b")
    assert 0 <= cli.derive_seed(7, "x") < 2 ** 63


def _snapshot(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(Path(d).rglob("*")) if p.is_file()}


def test_identical_runs_are_byte_identical(tmp_path, monkeypatch):
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        monkeypatch.chdir(d)
        assert cli.run(["simulate", "--set", "n_subjects=3000", "--set", "propensities=0.3,0.5",
                        "--set", "rho=0.5", "--seed", "9"]) == 0
        assert cli.run(["build-panel", "--contacts", "sim_contacts.csv"]) == 0
        assert cli.run(["lar", "--panel", "panel.csv", "--variance", "bootstrap", "--replicates", "30"]) == 0
        assert cli.run(["fit", "--panel", "panel.csv", "--kind", "binary", "--z", "R_eq_2",
                        "--method", "twostep", "--replicates", "12"]) == 0
    a, b = _snapshot(tmp_path / "a"), _snapshot(tmp_path / "b")
    assert a.keys() == b.keys() and len(a) >= 8
    assert a == b


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "reqiv", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "reqiv" in out.stdout
