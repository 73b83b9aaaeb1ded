"""Acceptance suite: one test per numbered criterion, each printing PASS/FAIL.

The closed-loop grid (criteria 7 and 9) runs 3 seeds x 5 arms over 20 days
and dominates the runtime (about 15 minutes on one core).
"""

import hashlib
import json
import math
import os
import time
import warnings

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from hubmpc.cli import main
from hubmpc.features import feature_matrix
from hubmpc.gp_forecast import (KernelHyperparameters, Standardizer, condition,
                                condition_on_history, fit, log_marginal_likelihood, posterior)
from hubmpc.guarantees import epsilon_bound, epsilon_closed_form, greedy_support
from hubmpc.hub_model import HubParameters, Tariffs
from hubmpc.optimizer import LPBuilder, certify_solution, solve_lp, solve_with_complementarity
from hubmpc.sampler import SamplerConfig, Weather, mean_trajectory, sample_trajectories
from hubmpc.simulator import SimulationConfig, run_closed_loop, summarize
from hubmpc.synthetic import SyntheticDataConfig, generate_synthetic_data
from instances import random_hub_instance
from oracles import central_difference, dense_posterior, enumerate_fixings, kernel_loop

Z90 = 1.6448536269514722  # two-sided 90% normal quantile


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line past pytest's capture, then assert."""
    def _report(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail
    return _report


def random_hp(rng, d):
    return KernelHyperparameters(float(rng.uniform(0.5, 2)), rng.uniform(0.5, 3, d),
                                 rng.uniform(0.05, 0.5, 2), float(rng.uniform(0.01, 0.3)),
                                 (0, 1))


def rel_err(a, b):
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


# 1 -----------------------------------------------------------------------

def test_c1_posterior_oracle(report):
    rng = np.random.default_rng(101)
    worst, elapsed = 0.0, 0.0
    for _ in range(100):
        d = int(rng.integers(2, 7))
        hp = random_hp(rng, d)
        X, xs = rng.normal(size=(50, d)), rng.normal(size=(10, d))
        y = np.sin(X @ rng.normal(size=d)) + 0.1 * rng.normal(size=50)
        t0 = time.perf_counter()
        m = condition("electric", "winter", hp, Standardizer.identity(d), X, y, (0, 50))
        mu, var = posterior(m, xs, latent=True)
        elapsed += time.perf_counter() - t0
        args = (hp.signal_variance, hp.lengthscales, hp.linear_dims, hp.linear_variances)
        m2, v2 = dense_posterior(kernel_loop(X, X, *args), kernel_loop(xs, X, *args),
                                 np.diag(kernel_loop(xs, xs, *args)), y, hp.noise_variance)
        worst = max(worst, rel_err(mu, m2), rel_err(var, v2))
    report(1, worst <= 1e-8 and elapsed < 10.0,
           f"max relative error {worst:.2e} (tol 1e-8), runtime {elapsed:.2f}s (< 10s)")


# 2 -----------------------------------------------------------------------

def test_c2_lml_gradient(report):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 6))
        hp = random_hp(rng, d)
        X = rng.normal(size=(int(rng.integers(15, 40)), d))
        y = X[:, 0] - np.cos(X[:, 1]) + 0.2 * rng.normal(size=len(X))
        _, g = log_marginal_likelihood(hp, X, y, grad=True)
        fd = central_difference(lambda th: log_marginal_likelihood(hp.from_log_vector(th), X, y),
                                hp.to_log_vector())
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8))))
    report(2, worst <= 1e-4, f"max relative gradient error {worst:.2e} (tol 1e-4)")


# 3 -----------------------------------------------------------------------

def test_c3_optimizer_exactness(report):
    rng = np.random.default_rng(303)
    shapes = [(1, 1), (1, 2), (2, 1)]  # T + 2MT pairs: 3, 5, 6
    worst, bad_cert, max_pairs = 0.0, 0, 0
    t0 = time.perf_counter()
    for i in range(50):
        T, M = shapes[i % 3]
        lp, pairs, _, _ = random_hub_instance(rng, T, M)
        max_pairs = max(max_pairs, len(pairs))
        res = solve_with_complementarity(lp, pairs)
        want = enumerate_fixings(lp, pairs, backend="simplex")
        worst = max(worst, abs(res.objective - want) / max(1.0, abs(want)))
        bad_cert += not certify_solution(lp, res, pairs).ok
    elapsed = time.perf_counter() - t0
    report(3, worst <= 1e-6 and bad_cert == 0 and max_pairs <= 8 and elapsed < 60,
           f"max objective gap {worst:.2e} (tol 1e-6), certificate failures {bad_cert}, "
           f"max pairs {max_pairs}, runtime {elapsed:.1f}s (< 60s)")


# 4 -----------------------------------------------------------------------

def test_c4_epsilon_identity(report):
    t0 = time.perf_counter()
    worst_id, worst_slack = 0.0, math.inf
    for beta in (0.1, 0.01, 1e-4):
        for M in range(1, 31):
            eps = [epsilon_closed_form(s, M, beta) for s in range(M)]
            total = sum(math.comb(M, s) * (1 - e) ** (M - s) for s, e in enumerate(eps))
            worst_id = max(worst_id, abs(total - beta))
            worst_slack = min(worst_slack, min(epsilon_bound(s, M, beta) - e
                                               for s, e in enumerate(eps)))
    elapsed = time.perf_counter() - t0
    report(4, worst_id <= 1e-10 and worst_slack >= -1e-12 and elapsed < 1.0,
           f"max identity error {worst_id:.2e} (tol 1e-10), min bound slack "
           f"{worst_slack:.2e} (>= -1e-12), runtime {elapsed * 1e3:.0f}ms")


# 5 -----------------------------------------------------------------------

TOY_MEAN = np.array([1.0, 0.5])
TOY_COV = np.array([[1.0, 0.3], [0.3, 0.5]])
TOY_MAP = np.array([[1.0, 0.0], [1.0, 1.0]])  # (d1, d2) -> (d1, d1 + d2)


def toy_solve(d):
    """min 2 q1 + q2 s.t. q1 >= d1_i, q1 + q2 >= d1_i + d2_i, q2 >= 0."""
    b = LPBuilder()
    q1 = b.add_var("q1", lb=-1e3, cost=2.0)
    q2 = b.add_var("q2", lb=0.0, cost=1.0)
    for d1, d2 in d:
        b.add_row({q1: 1.0}, "G", d1)
        b.add_row({q1: 1.0, q2: 1.0}, "G", d1 + d2)
    res = solve_lp(b.build())
    assert res.status == "optimal"
    return res.x


def toy_violation(q):
    """Exact probability that a fresh draw breaks one of the two constraints."""
    law = multivariate_normal(TOY_MAP @ TOY_MEAN, TOY_MAP @ TOY_COV @ TOY_MAP.T)
    return 1.0 - float(law.cdf(np.array([q[0], q[0] + q[1]])))


def test_c5_guarantee_monte_carlo(report):
    M, beta, reps = 50, 0.05, 200
    t0 = time.perf_counter()
    failures, s_seen = 0, []
    for r in range(reps):
        d = np.random.default_rng([505, r]).multivariate_normal(TOY_MEAN, TOY_COV, M)
        ref = toy_solve(d)
        removed, _ = greedy_support(lambda kept: toy_solve(d[kept]), M, ref)
        s = M - len(removed)
        s_seen.append(s)
        failures += toy_violation(ref) > epsilon_closed_form(s, M, beta)
    elapsed = time.perf_counter() - t0
    limit = 0.05 + 3 * math.sqrt(0.05 * 0.95 / reps)
    frac = failures / reps
    report(5, frac <= limit and elapsed < 600,
           f"failure fraction {frac:.3f} (<= {limit:.4f}), s* range "
           f"[{min(s_seen)}, {max(s_seen)}], runtime {elapsed:.1f}s (< 600s)")


# 6 -----------------------------------------------------------------------

def test_c6_sampler_marginals(report, small_models, history):
    rng = np.random.default_rng(606)
    lo, hi = history.index_of("2018-02-21T00"), history.index_of("2018-03-10T00")
    M, worst, clipped = 10_000, 0.0, 0
    for k in rng.choice(np.arange(lo, hi), 20, replace=False):
        k = int(k)
        s = sample_trajectories(small_models, history, k, Weather.from_history(history, k, 1),
                                SamplerConfig(M=M, T=1, seed=int(k)))
        clipped += s.clipped
        for kind, draws in (("electric", s.L_e[:, 0]), ("heat", s.L_h[:, 0])):
            mu, var = posterior(small_models[kind], feature_matrix(history, kind, [k])[0])
            worst = max(worst, abs(draws.mean() - float(mu)) / (math.sqrt(float(var) / M)))
    k = lo + 5
    zv = sample_trajectories(small_models, history, k, Weather.from_history(history, k, 24),
                             SamplerConfig(M=3, T=24, seed=0, zero_variance=True))
    mt = mean_trajectory(small_models, history, k, Weather.from_history(history, k, 24), 24)
    zv_gap = max(float(np.max(np.abs(zv.L_e - mt.L_e) / mt.L_e)),
                 float(np.max(np.abs(zv.L_h - mt.L_h) / mt.L_h)))
    report(6, worst <= 4.0 and clipped == 0 and zv_gap <= 1e-12,
           f"max |sample mean - posterior mean| = {worst:.2f} sigma/sqrt(M) (<= 4), "
           f"clipped {clipped}, zero-variance vs mean trajectory rel gap {zv_gap:.1e}")


# 7 and 9 -----------------------------------------------------------------

GRID_M = (1, 3, 10, 50)
SEEDS = (0, 1, 2)


def closed_loop_grid(seed: int) -> dict:
    """20-day winter run of pd_mpc and the scenario controller at each M."""
    hist = generate_synthetic_data(SyntheticDataConfig(start="2018-01-01T00",
                                                       end="2019-02-01T00", seed=seed))
    stop = hist.index_of("2018-12-01T00")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        models = {kind: fit(hist, kind, "winter", train_range=(0, stop), window_hours=672,
                            n_fit=400, restarts=1, seed=seed)
                  for kind in ("electric", "heat")}
    params, tar = HubParameters(), Tariffs.constant(len(hist))
    arms = [("pd_mpc", 1)] + [("scenario", M) for M in GRID_M]
    out, t0 = {}, time.perf_counter()
    for ctrl, M in arms:
        cfg = SimulationConfig(start="2018-12-10T00", hours=20 * 24, controller=ctrl, M=M,
                               sampling_seed=seed, data_seed=seed)
        s = summarize(run_closed_loop(cfg, hist, params, tar, models))
        out[cfg.label] = s
    out["runtime_s"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="module")
def grid():
    return {seed: closed_loop_grid(seed) for seed in SEEDS}


@pytest.mark.slow
def test_c7_closed_loop_trends(report, grid):
    lines, viol_ok, cost_ok, pd_ok = [], 0, True, True
    for seed, g in grid.items():
        sc = [g[f"scenario_M{M}"] for M in GRID_M]
        cum = [s["cumulative_violation_kwh"] for s in sc]
        cost = [s["mean_cost_chf_per_h"] for s in sc]
        pd = g["pd_mpc"]
        viol_ok += all(b <= a for a, b in zip(cum, cum[1:]))
        cost_ok &= all(b >= a * 0.98 for a, b in zip(cost, cost[1:]))
        cheapest = min(cost)
        pd_ok &= pd["violation_count"] == 0 and pd["mean_cost_chf_per_h"] <= cheapest
        lines.append(f"seed {seed}: pd cost {pd['mean_cost_chf_per_h']:.3f} viol "
                     f"{pd['violation_count']}; M{GRID_M} cost "
                     f"{[round(c, 3) for c in cost]} cum viol {[round(c, 1) for c in cum]} "
                     f"({g['runtime_s']:.0f}s)")
    total = sum(g["runtime_s"] for g in grid.values())
    time_ok = total < 1800
    with_detail = (f"violations non-increasing on {viol_ok}/3 seeds (need 2), "
                   f"cost within 2% band {'yes' if cost_ok else 'no'}, pd zero-violation "
                   f"and cheapest {'yes' if pd_ok else 'no'}, full grid "
                   f"{total / 60:.1f} min (< 30) || " + " || ".join(lines))
    report(7, viol_ok >= 2 and cost_ok and pd_ok and time_ok, with_detail)


@pytest.mark.slow
def test_c9_ledger_closure(report, grid):
    worst_hour, worst_run, runs = 0.0, 0.0, 0
    for g in grid.values():
        for label, s in g.items():
            if label == "runtime_s" or s["aborted"] is not None:
                continue
            runs += 1
            worst_hour = max(worst_hour, s["max_hourly_ledger_residual"])
            worst_run = max(worst_run, s["run_ledger_residual"] / s["throughput_kwh"])
    report(9, runs == 15 and worst_hour < 1e-6 and worst_run < 1e-6,
           f"{runs} runs, max hourly residual {worst_hour:.1e} kWh (< 1e-6), max run "
           f"residual / throughput {worst_run:.1e} (< 1e-6)")


# 8 -----------------------------------------------------------------------

PIPELINE = """\
schema_version = 1

[data]
start = "2018-01-01T00"
end = "2018-03-05T00"
seed = 8

[train]
train_end = "2018-02-15T00"
seasons = ["winter"]
window_hours = 240
n_fit = 100
restarts = 1
max_iter = 30
seed = 0

[forecast]
origin = "2018-02-20T00"
M = 5
T = 24
seed = 2
window_hours = 240
quartile_start = "2018-02-20T00"
quartile_end = "2018-02-23T00"

[simulate]
start = "2018-02-20T00"
hours = 6
controllers = ["pd_mpc", "mean_mpc", "scenario"]
M = [2]
seed = 0
window_hours = 240

[guarantee]
beta = 0.05
"""


def digest(directory):
    return {n: hashlib.sha256(open(os.path.join(directory, n), "rb").read()).hexdigest()
            for n in sorted(os.listdir(directory)) if n != "manifest.json"}


def test_c8_manifest_determinism(report, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(PIPELINE)
    d = {k: str(tmp_path / k) for k in ("data", "models", "fc", "sim", "cert")}
    hist = os.path.join(d["data"], "history.csv")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        codes = [
            main(["gen-data", "--config", str(cfg), "--out", d["data"]]),
            main(["train", "--config", str(cfg), "--data", hist, "--out", d["models"]]),
            main(["forecast", "--config", str(cfg), "--data", hist, "--models", d["models"],
                  "--out", d["fc"], "--solve-sp"]),
            main(["simulate", "--config", str(cfg), "--data", hist, "--models", d["models"],
                  "--out", d["sim"]]),
            main(["certify", "--config", str(cfg), "--solution",
                  os.path.join(d["fc"], "sp_solution.json"), "--scenarios",
                  os.path.join(d["fc"], "scenarios.csv"), "--out", d["cert"]]),
        ]
        same, files = [], 0
        for stage, path in d.items():
            again = tmp_path / f"rerun_{stage}"
            man = os.path.join(path, "manifest.json")
            cmd = json.load(open(man))["command"]
            rc = main([cmd, "--from-manifest", man, "--out", str(again)])
            ref = digest(path)
            files += len(ref)
            same.append(rc == 0 and digest(again) == ref)
    report(8, codes == [0] * 5 and all(same),
           f"exit codes {codes}, {sum(same)}/5 stages byte-identical on rerun "
           f"({files} files hashed)")


# 10 ----------------------------------------------------------------------

def test_c10_forecast_calibration(report):
    # no annual temperature cycle: the winter model sees a stationary climate
    hist = generate_synthetic_data(SyntheticDataConfig(start="2018-01-01T00",
                                                       end="2019-03-01T00",
                                                       temp_annual_amp=0.0, seed=11))
    stop = hist.index_of("2018-03-01T00")
    a = hist.index_of("2018-12-01T00")
    cover = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for kind in ("electric", "heat"):
            model = fit(hist, kind, "winter", train_range=(0, stop), window_hours=672,
                        n_fit=400, restarts=1, seed=0)
            hits = n = 0
            for day in range(a, len(hist), 24):
                live = condition_on_history(model, hist, day, 672)
                ks = np.arange(day, min(day + 24, len(hist)))
                mu, var = posterior(live, feature_matrix(hist, kind, ks))
                hits += int((np.abs(hist.demand(kind)[ks] - mu) <= Z90 * np.sqrt(var)).sum())
                n += len(ks)
            cover[kind] = (hits / n, n)
    ok = all(0.85 <= c <= 0.95 and n >= 2000 for c, n in cover.values())
    report(10, ok, ", ".join(f"{k} coverage {c:.3f} over {n} predictions"
                             for k, (c, n) in cover.items()) + " (target [0.85, 0.95])")
