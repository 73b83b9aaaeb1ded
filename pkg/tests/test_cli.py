import csv
import hashlib
import json
import os

import numpy as np
import pytest

from hubmpc.cli import main, quartile_report
from hubmpc.features import DemandHistory
from hubmpc.gp_forecast import condition_on_history, load_model
from hubmpc.sampler import Weather, mean_trajectory
from oracles import nearest_rank

CONFIG = """\
schema_version = 1

[data]
start = "2018-01-01T00"
end = "2018-03-12T00"
seed = 3

[train]
train_end = "2018-02-20T00"
seasons = ["winter"]
window_hours = 240
n_fit = 120
restarts = 1
max_iter = 40
seed = 0

[forecast]
origin = "2018-02-25T00"
M = 4
T = 24
seed = 1
window_hours = 240
quartile_start = "2018-02-25T00"
quartile_end = "2018-03-01T00"

[simulate]
start = "2018-02-25T00"
hours = 6
controllers = ["pd_mpc", "scenario"]
M = [1, 2]
seed = 0
window_hours = 240

[guarantee]
beta = 0.05
"""


def digest(directory, skip=("manifest.json",)):
    out = {}
    for name in sorted(os.listdir(directory)):
        if name not in skip:
            with open(os.path.join(directory, name), "rb") as fh:
                out[name] = hashlib.sha256(fh.read()).hexdigest()
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """One small end-to-end pipeline shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.toml"
    cfg.write_text(CONFIG)
    d = {k: str(root / k) for k in ("data", "models", "fc", "sim", "cert")}
    hist = os.path.join(d["data"], "history.csv")
    assert main(["gen-data", "--config", str(cfg), "--out", d["data"]]) == 0
    assert main(["train", "--config", str(cfg), "--data", hist, "--out", d["models"]]) == 0
    assert main(["forecast", "--config", str(cfg), "--data", hist, "--models", d["models"],
                 "--out", d["fc"], "--solve-sp"]) == 0
    assert main(["simulate", "--config", str(cfg), "--data", hist, "--models", d["models"],
                 "--out", d["sim"]]) == 0
    assert main(["certify", "--config", str(cfg), "--solution",
                 os.path.join(d["fc"], "sp_solution.json"), "--scenarios",
                 os.path.join(d["fc"], "scenarios.csv"), "--out", d["cert"]]) == 0
    return root, cfg, d, hist


def test_gen_data_rows(run):
    _, _, d, hist = run
    h = DemandHistory.from_csv(hist)
    assert len(h) == 70 * 24
    assert str(h.timestamps[0]) == "2018-01-01T00"


def test_train_outputs(run):
    _, _, d, hist = run
    names = sorted(os.listdir(d["models"]))
    assert names == ["fit_diagnostics.json", "manifest.json", "model_electric_winter.json",
                     "model_heat_winter.json"]
    diag = json.loads(open(os.path.join(d["models"], "fit_diagnostics.json")).read())
    assert set(diag) == {"electric_winter", "heat_winter"}
    golden = json.loads(open(os.path.join(os.path.dirname(__file__), "golden",
                                          "fit_diagnostics_small.json")).read())
    for key, g in golden.items():
        assert diag[key]["log_marginal_likelihood"] == pytest.approx(
            g["log_marginal_likelihood"], rel=1e-6)
        assert diag[key]["iterations"] == g["iterations"]


def test_forecast_outputs(run):
    _, _, d, _ = run
    rows = read_csv(os.path.join(d["fc"], "trajectories.csv"))
    assert len(rows) == 4 * 24 and list(rows[0]) == ["scenario", "step", "L_e_kwh", "L_h_kwh"]
    sol = json.loads(open(os.path.join(d["fc"], "sp_solution.json")).read())
    assert sol["solution"]["status"] == "optimal" and sol["M"] == 4


def test_quartiles_match_sort_oracle(run):
    _, _, d, hist_path = run
    hist = DemandHistory.from_csv(hist_path)
    rows = read_csv(os.path.join(d["fc"], "quartiles.csv"))
    assert len(rows) == 2 * 24
    pair = {k: load_model(os.path.join(d["models"], f"model_{k}_winter.json"), hist)
            for k in ("electric", "heat")}
    errs = {"electric": [], "heat": []}
    for k in range(hist.index_of("2018-02-25T00"), hist.index_of("2018-03-01T00"), 24):
        live = {kind: condition_on_history(m, hist, k, 240) for kind, m in pair.items()}
        mt = mean_trajectory(live, hist, k, Weather.from_history(hist, k, 24), 24)
        errs["electric"].append(100 * (mt.L_e - hist.L_e[k:k + 24]) / hist.L_e[k:k + 24])
        errs["heat"].append(100 * (mt.L_h - hist.L_h[k:k + 24]) / hist.L_h[k:k + 24])
    for r in rows:
        col = np.array(errs[r["kind"]])[:, int(r["step"]) - 1]
        assert int(r["n"]) == 4
        for p in (25, 50, 75):
            assert float(r[f"q{p}_pct"]) == pytest.approx(nearest_rank(col, p), rel=1e-9)


def test_quartile_report_function_shape(run):
    _, _, d, hist_path = run
    hist = DemandHistory.from_csv(hist_path)
    bank = {"winter": {k: load_model(os.path.join(d["models"], f"model_{k}_winter.json"), hist)
                       for k in ("electric", "heat")}}
    k = hist.index_of("2018-02-25T00")
    rows = quartile_report(bank, hist, k, k + 1, 3, 240)
    assert [r["step"] for r in rows] == [1, 2, 3, 1, 2, 3] and rows[0]["n"] == 1


def test_simulate_arms(run):
    _, _, d, _ = run
    names = set(os.listdir(d["sim"]))
    for label in ("pd_mpc", "scenario_M1", "scenario_M2"):
        assert f"summary_{label}.json" in names and f"trace_{label}.csv" in names
    combined = read_csv(os.path.join(d["sim"], "combined.csv"))
    assert [r["label"] for r in combined] == ["pd_mpc", "scenario_M1", "scenario_M2"]
    pd = json.loads(open(os.path.join(d["sim"], "summary_pd_mpc.json")).read())
    assert pd["violation_count"] == 0 and pd["hours"] == 6


def test_certificate(run):
    _, _, d, _ = run
    cert = json.loads(open(os.path.join(d["cert"], "certificate.json")).read())
    assert cert["M"] == 4 and 0 <= cert["s_star"] <= 4 and cert["beta"] == 0.05


@pytest.mark.parametrize("stage", ["data", "models", "fc", "sim", "cert"])
def test_rerun_from_manifest_is_byte_identical(run, stage, tmp_path):
    _, _, d, _ = run
    cmd = json.loads(open(os.path.join(d[stage], "manifest.json")).read())["command"]
    assert main([cmd, "--from-manifest", os.path.join(d[stage], "manifest.json"),
                 "--out", str(tmp_path)]) == 0
    assert digest(tmp_path) == digest(d[stage])


def test_same_seed_same_hashes(run, tmp_path):
    _, cfg, _, _ = run
    main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "b")])
    main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "4"])
    assert digest(tmp_path / "a") == digest(tmp_path / "b") != digest(tmp_path / "c")


def test_forecast_fifty_scenarios_and_zero_variance(run, tmp_path):
    _, cfg, d, hist = run
    assert main(["forecast", "--config", str(cfg), "--data", hist, "--models", d["models"],
                 "--out", str(tmp_path / "m50"), "--M", "50"]) == 0
    rows = read_csv(tmp_path / "m50" / "trajectories.csv")
    assert len(rows) == 50 * 24
    assert sum(len(r) - 2 for r in rows) == 2400  # two demand values per row
    assert main(["forecast", "--config", str(cfg), "--data", hist, "--models", d["models"],
                 "--out", str(tmp_path / "zv"), "--zero-variance"]) == 0
    rows = read_csv(tmp_path / "zv" / "trajectories.csv")
    by_step = {}
    for r in rows:
        by_step.setdefault(r["step"], set()).add((r["L_e_kwh"], r["L_h_kwh"]))
    assert all(len(v) == 1 for v in by_step.values())


def test_arm_count_from_flags(run, tmp_path):
    _, cfg, d, hist = run
    assert main(["simulate", "--config", str(cfg), "--data", hist, "--models", d["models"],
                 "--out", str(tmp_path), "--controllers", "pd,scenario", "--M", "1,3,10",
                 "--jobs", "2"]) == 0
    summaries = [n for n in os.listdir(tmp_path) if n.startswith("summary_")]
    assert len(summaries) == 4
    assert len(read_csv(tmp_path / "combined.csv")) == 4


def test_certify_duplicates_unit_support(run, tmp_path):
    _, cfg, d, hist = run
    src = read_csv(os.path.join(d["fc"], "scenarios.csv"))
    one = [r for r in src if r["scenario"] == "0"]
    with open(tmp_path / "dup.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "step", "L_e_kwh", "L_h_kwh"])
        for i in range(5):
            for r in one:
                w.writerow([i, r["step"], r["L_e_kwh"], r["L_h_kwh"]])
    from hubmpc.sampler import ScenarioSet
    from hubmpc.scenario_mpc import dump_solution, load_solution, solve_scenarios
    _, problem = load_solution(os.path.join(d["fc"], "sp_solution.json"))
    sc = ScenarioSet.from_csv(tmp_path / "dup.csv")
    dump_solution(solve_scenarios(problem, sc), problem, sc, tmp_path / "dup.json")
    assert main(["certify", "--beta", "0.05", "--solution", str(tmp_path / "dup.json"),
                 "--scenarios", str(tmp_path / "dup.csv"), "--out", str(tmp_path / "c")]) == 0
    cert = json.loads((tmp_path / "c" / "certificate.json").read_text())
    assert cert["s_star"] == 1 and cert["removed_indices"] == [0, 1, 2, 3]


def test_certify_hash_mismatch(run, tmp_path):
    _, _, d, _ = run
    rows = read_csv(os.path.join(d["fc"], "scenarios.csv"))
    rows[0]["L_h_kwh"] = str(float(rows[0]["L_h_kwh"]) + 1.0)
    with open(tmp_path / "bad.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    assert main(["certify", "--beta", "0.05", "--solution",
                 os.path.join(d["fc"], "sp_solution.json"), "--scenarios",
                 str(tmp_path / "bad.csv"), "--out", str(tmp_path / "c")]) == 2


def test_missing_key_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(CONFIG.replace('seed = 3\n', '', 1))
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "data.seed" in capsys.readouterr().err
    assert main(["gen-data", "--out", str(tmp_path / "o")]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["gen-data", "--config", str(tmp_path / "nope.toml"),
                 "--out", str(tmp_path / "o")]) == 2


def test_empty_season_window_fails(run, tmp_path):
    _, _, _, hist = run
    cfg = tmp_path / "summer.toml"
    cfg.write_text(CONFIG.replace('seasons = ["winter"]', 'seasons = ["summer"]'))
    assert main(["train", "--config", str(cfg), "--data", hist, "--out", str(tmp_path)]) == 1


def test_retrain_identical_model(run, tmp_path):
    _, cfg, d, hist = run
    assert main(["train", "--config", str(cfg), "--data", hist, "--out", str(tmp_path)]) == 0
    assert digest(tmp_path) == digest(d["models"])
