import csv
import json

import numpy as np
import pytest

from swedge.cli import main, probe_design
from swedge.data import TrialDataset, export_csv
from swedge.design import StepWedgeDesign, sample_assignment

from conftest import observed

DESIGN = StepWedgeDesign(20, (4, 8, 12, 16))


def write_design(tmp_path, design, name="design.json"):
    path = tmp_path / name
    path.write_text(json.dumps(design.to_dict()))
    return path


def planted(seed, lam=-0.18, design=DESIGN, size=12, full=False):
    """Records with outcome lam * D plus covariate and cluster terms."""
    rng = np.random.default_rng(seed)
    adoption = np.asarray(sample_assignment(design, rng).adoption_times)
    sizes = np.full((design.I, design.J + 2), size)
    ds = observed(design, adoption, rng, sizes=sizes)
    d = ds.z.copy() if full else ds.d
    u = rng.normal(scale=0.1, size=design.I)[ds.cluster]
    y = lam * d + ds.x @ np.array([0.5, -0.3]) + u + rng.normal(scale=0.5, size=ds.n_records)
    return TrialDataset.from_arrays(design, ds.cluster, ds.period, ds.z, d, y, ds.x)


def write_data(tmp_path, ds, name="data.csv"):
    path = tmp_path / name
    export_csv(ds, path)
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- analyze --------------------------------------------------------------------------


def test_analyze_writes_reports_and_manifest(tmp_path):
    data = write_data(tmp_path, planted(0))
    design = write_design(tmp_path, DESIGN)
    out = tmp_path / "out"
    code = main([
        "analyze", "--data", str(data), "--design", str(design), "--out", str(out),
        "--estimator", "ancova3", "--estimator", "ht-adj-prepost",
        "--variance", "cr3", "--variance", "ht-conservative", "--plot-csv",
    ])
    assert code == 0
    for name in ("analysis.csv", "analysis.json", "analysis.txt", "intervals_long.csv", "manifest.json"):
        assert (out / name).is_file()
    rows = read_rows(out / "analysis.csv")
    assert [(r["estimator"], r["variance"]) for r in rows] == [("ancova3", "cr3"), ("ht-adj-prepost", "ht-conservative")]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "analyze"
    assert set(manifest["outputs"]) >= {"analysis.csv", "analysis.json"}
    assert "numpy" in manifest["versions"]


def test_planted_ratio_recovered(tmp_path):
    big = StepWedgeDesign(40, (8, 16, 24, 32))
    data = write_data(tmp_path, planted(1, design=big, size=30))
    design = write_design(tmp_path, big)
    out = tmp_path / "out"
    args = ["analyze", "--data", str(data), "--design", str(design), "--out", str(out), "--format", "csv"]
    for est in ("unadjusted", "ancova1", "ancova3"):
        args += ["--estimator", est]
    assert main(args) == 0
    for row in read_rows(out / "analysis.csv"):
        lam, se = float(row["lambda_hat"]), float(row["se_at_lambda_hat"])
        assert abs(lam + 0.18) <= 3 * se, row
        # about 0.065 across seeds for this layout
        assert se < 0.1
        assert row["ci95_type"] == "bounded" and float(row["ci95_lo"]) <= -0.18 <= float(row["ci95_hi"])


def test_nested_interval_levels(tmp_path):
    data = write_data(tmp_path, planted(2))
    design = write_design(tmp_path, DESIGN)
    out = tmp_path / "out"
    args = ["analyze", "--data", str(data), "--design", str(design), "--out", str(out), "--format", "csv"]
    for est in ("unadjusted", "ancova1", "ancova3", "ht", "ht-adj-prepost"):
        args += ["--estimator", est]
    assert main(args) == 0
    checked = 0
    for row in read_rows(out / "analysis.csv"):
        if row["status"] == "ok" and row["ci90_type"] == row["ci95_type"] == "bounded":
            assert float(row["ci95_lo"]) <= float(row["ci90_lo"]) <= float(row["ci90_hi"]) <= float(row["ci95_hi"])
            checked += 1
    assert checked >= 3


def test_full_compliance_matches_itt(tmp_path):
    from swedge.ancova import fit_ancova, tau_hat

    ds = planted(3, full=True)
    data = write_data(tmp_path, ds)
    design = write_design(tmp_path, DESIGN)
    out = tmp_path / "out"
    args = ["analyze", "--data", str(data), "--design", str(design), "--out", str(out), "--format", "json"]
    for est in ("unadjusted", "ancova1", "ancova3"):
        args += ["--estimator", est]
    assert main(args) == 0
    for row in json.loads((out / "analysis.json").read_text()):
        itt = tau_hat(fit_ancova(ds, row["estimator"]), 0.0)
        assert row["lambda_hat"] == pytest.approx(itt, rel=1e-9)


def test_all_declined_exits_one(tmp_path):
    ds = planted(4)
    # no covariates, so every covariate-adjusted flavor declines
    bare = TrialDataset.from_arrays(DESIGN, ds.cluster, ds.period, ds.z, ds.d, ds.y)
    data = write_data(tmp_path, bare)
    design = write_design(tmp_path, DESIGN)
    out = tmp_path / "out"
    code = main(["analyze", "--data", str(data), "--design", str(design), "--out", str(out),
                 "--estimator", "ancova1", "--estimator", "ancova3"])
    assert code == 1
    assert {r["status"] for r in read_rows(out / "analysis.csv")} == {"declined"}


@pytest.mark.parametrize("argv", [
    ["analyze", "--design", "missing.json", "--data", "missing.csv"],
    ["analyze", "--alpha", "1.5"],
    ["analyze"],
    ["simulate", "--scenario", "no-such-file.json"],
    ["design-probe", "--design", "nope.json"],
    ["frobnicate"],
])
def test_config_errors_exit_two(tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_bad_data_exits_two(tmp_path, capsys):
    design = write_design(tmp_path, DESIGN)
    data = tmp_path / "bad.csv"
    data.write_text("cluster,period,z,d,y\n0,0,0,2,1.0\n")
    assert main(["analyze", "--data", str(data), "--design", str(design), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


# -- design-probe ----------------------------------------------------------------------


def test_probe_one_at_a_time():
    report = probe_design(StepWedgeDesign.one_at_a_time(10))
    assert report["I"] == 11 and report["periods"][0]["propensity"] == "1/11"
    assert all(p["flagged"] for p in report["periods"])


def test_probe_no_flags():
    report = probe_design(StepWedgeDesign(6, (2, 4)))
    assert not any(p["flagged"] for p in report["periods"])


def test_probe_enumerable_text(tmp_path, capsys):
    design = write_design(tmp_path, StepWedgeDesign(3, (1, 2)))
    out = tmp_path / "probe"
    assert main(["design-probe", "--design", str(design), "--out", str(out)]) == 0
    assert "enumerable: 6 assignments" in capsys.readouterr().out
    assert json.loads((out / "design_probe.json").read_text())["assignments"] == 6
    assert (out / "manifest.json").is_file()


def test_probe_not_enumerable(capsys, tmp_path):
    design = write_design(tmp_path, StepWedgeDesign(12, (2, 4, 6, 8, 10)))
    assert main(["design-probe", "--design", str(design), "--cap", "1000"]) == 0
    assert "not enumerable" in capsys.readouterr().out


# -- simulate and diagnose ------------------------------------------------------------------


def test_simulate_writes_results(tmp_path):
    scen = tmp_path / "scen.json"
    scen.write_text(json.dumps({"scenarios": [
        {"name": "tiny", "design": {"I": 6, "cumulative_treated": [2, 4]}, "n_reps": 2,
         "methods": ["ancova1/cr0/t", "ht/ht-conservative/gaussian"]},
        {"name": "tiny", "design": {"I": 6, "cumulative_treated": [2, 4]}, "n_reps": 2,
         "informative_size": True, "methods": ["ancova1/cr0/t", "ht/ht-conservative/gaussian"]},
    ]}))
    out = tmp_path / "sim"
    assert main(["simulate", "--scenario", str(scen), "--out", str(out), "--workers", "1", "--seed", "5"]) == 0
    rows = read_rows(out / "results.csv")
    assert len(rows) == 2 * 2 * 4
    assert {r["metric"] for r in rows} == {"bias", "mse", "type.I", "power"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5
    data = json.loads((out / "results.json").read_text())
    assert all(c["scenario"]["base_seed"] == 5 for c in data["cells"])


def test_simulate_bad_scenario_exits_two(tmp_path):
    scen = tmp_path / "scen.json"
    scen.write_text(json.dumps({"design": {"I": 6, "cumulative_treated": [2, 4]}, "methods": ["ht/cr0/t"]}))
    assert main(["simulate", "--scenario", str(scen), "--out", str(tmp_path / "o")]) == 2


def test_diagnose_four_rows(tmp_path):
    from test_diagnostics import trial

    ds = trial(7)
    data = write_data(tmp_path, ds)
    design = write_design(tmp_path, ds.design)
    out = tmp_path / "diag"
    assert main(["diagnose", "--data", str(data), "--design", str(design), "--out", str(out)]) == 0
    rows = read_rows(out / "duration_tests.csv")
    assert len(rows) == 4
    assert all(float(r["p_value"]) >= 0.05 for r in rows)
    assert len(read_rows(out / "balance.csv")) == ds.p
    assert (out / "manifest.json").is_file()
