"""Command-line front end.

    hubmpc gen-data --config c.toml --out d/ [--seed N]
    hubmpc train    --config c.toml --data d/history.csv --out m/ [--seed N]
    hubmpc forecast --config c.toml --data d/history.csv --models m/ --out f/
                    [--at TIMESTAMP] [--M N] [--seed N] [--zero-variance] [--solve-sp]
    hubmpc simulate --config c.toml --data d/history.csv --models m/ --out s/
                    [--controllers pd,scenario,mean] [--M 1,3,10] [--seed N] [--jobs N]
    hubmpc certify  --solution f/sp_solution.json --scenarios f/scenarios.csv --out c/
                    [--beta B] [--config c.toml]

Every command first writes ``manifest.json`` into its output directory;
``hubmpc <command> --from-manifest path/manifest.json [--out dir]`` reruns it
with the recorded options and config snapshot. Exit codes: 0 success,
1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_config
from .features import (SEASONS, DemandHistory, nearest_rank_quantiles, read_holidays,
                       select_seasonal_model)
from .gp_forecast import condition_on_history, fit, load_model, save_model
from .guarantees import GuaranteeConfig, certify, same_solution
from .hub_model import HubState
from .sampler import SamplerConfig, ScenarioSet, Weather, mean_trajectory, sample_trajectories
from .scenario_mpc import (SPConfig, SPProblem, dump_solution, load_solution, scenario_hash,
                           solve_scenarios)
from .simulator import (SimulationConfig, arm_configs, run_closed_loop, summarize,
                        write_summary)
from .synthetic import generate_synthetic_data

log = logging.getLogger("hubmpc")

CONTROLLER_ALIASES = {"pd": "pd_mpc", "pd_mpc": "pd_mpc", "scenario": "scenario",
                      "mean": "mean_mpc", "mean_mpc": "mean_mpc"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _abs(p):
    return None if p is None else os.path.abspath(p)


def _write_manifest(out: str, command: str, opts: dict, cfg: RunConfig | None, seeds: dict):
    os.makedirs(out, exist_ok=True)
    _write_json({"command": command, "options": opts, "config_path": cfg.path if cfg else None,
                 "config": cfg.raw if cfg else None, "seeds": seeds,
                 "tool_version": __version__, "output_dir": os.path.abspath(out)},
                os.path.join(out, "manifest.json"))


def _load_history(path, holidays=None) -> DemandHistory:
    hol = read_holidays(holidays) if holidays else ()
    return DemandHistory.from_csv(path, hol)


def _model_bank(models_dir: str, history: DemandHistory) -> dict:
    bank = {}
    for season in SEASONS:
        pair = {}
        for kind in ("electric", "heat"):
            p = os.path.join(models_dir, f"model_{kind}_{season}.json")
            if os.path.exists(p):
                pair[kind] = load_model(p, history)
        if len(pair) == 2:
            bank[season] = pair
    if not bank:
        raise FileNotFoundError(f"no model files (model_<kind>_<season>.json) in {models_dir}")
    return bank


def _pair_for(bank: dict, ts) -> dict:
    season = select_seasonal_model(ts)
    if season not in bank:
        raise FileNotFoundError(f"no trained {season} models for {ts}")
    return bank[season]


def _int_list(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError as err:
        raise UsageError(f"expected a comma-separated integer list, got {s!r}") from err


# ---------------------------------------------------------------- commands

def cmd_gen_data(opts: dict, cfg: RunConfig) -> int:
    dcfg = cfg.data()
    if opts.get("seed") is not None:
        dcfg = replace(dcfg, seed=opts["seed"])
    _write_manifest(opts["out"], "gen-data", opts, cfg, {"data": dcfg.seed})
    hist = generate_synthetic_data(dcfg)
    hist.to_csv(os.path.join(opts["out"], "history.csv"))
    print(f"wrote {len(hist)} hourly rows to {os.path.join(opts['out'], 'history.csv')}")
    return 0


def cmd_train(opts: dict, cfg: RunConfig) -> int:
    tcfg = cfg.train()
    if opts.get("seed") is not None:
        tcfg = replace(tcfg, seed=opts["seed"])
    _write_manifest(opts["out"], "train", opts, cfg, {"train": tcfg.seed})
    hist = _load_history(opts["data"], opts.get("holidays"))
    end = np.datetime64(tcfg.train_end, "h")
    if end > hist.timestamps[-1] + np.timedelta64(1, "h") or end <= hist.timestamps[0]:
        raise ValueError(f"training window ends {end}, data covers "
                         f"[{hist.timestamps[0]}, {hist.timestamps[-1]}]")
    stop = int((end - hist.timestamps[0]).astype(np.int64))
    diag = {}
    for season in tcfg.seasons:
        for kind in ("electric", "heat"):
            m = fit(hist, kind, season, train_range=(0, stop), window_hours=tcfg.window_hours,
                    n_fit=tcfg.n_fit, restarts=tcfg.restarts, max_iter=tcfg.max_iter,
                    seed=tcfg.seed)
            save_model(m, os.path.join(opts["out"], f"model_{kind}_{season}.json"), hist)
            fi = m.fit_info
            diag[f"{kind}_{season}"] = {"log_marginal_likelihood": fi.lml,
                                        "grad_norm": fi.grad_norm, "converged": fi.converged,
                                        "iterations": fi.iterations}
            print(f"{kind:8s} {season:7s} lml={fi.lml:.6f} grad_norm={fi.grad_norm:.3e} "
                  f"converged={fi.converged}")
    _write_json(diag, os.path.join(opts["out"], "fit_diagnostics.json"))
    return 0


def _forecast_models(bank, hist, k, window_hours):
    pair = _pair_for(bank, hist.timestamps[k])
    return {kind: condition_on_history(pair[kind], hist, k, window_hours) for kind in pair}


def quartile_report(bank, hist: DemandHistory, start: int, stop: int, T: int,
                    window_hours: int, every: int = 24) -> list[dict]:
    """Relative error (%) quartiles of the mean trajectory per kind and step."""
    errs = {"electric": [], "heat": []}
    for k in range(start, stop, every):
        live = _forecast_models(bank, hist, k, window_hours)
        mt = mean_trajectory(live, hist, k, Weather.from_history(hist, k, T), T)
        for kind, pred in (("electric", mt.L_e), ("heat", mt.L_h)):
            true = hist.demand(kind)[k:k + T]
            errs[kind].append(100.0 * (pred - true) / np.maximum(true, 1e-9))
    rows = []
    for kind, e in errs.items():
        if not e:
            continue
        E = np.array(e)  # (n_origins, T)
        q = nearest_rank_quantiles(E.T, (25.0, 50.0, 75.0))
        for s in range(T):
            rows.append({"kind": kind, "step": s + 1, "n": E.shape[0], "q25_pct": q[s, 0],
                         "q50_pct": q[s, 1], "q75_pct": q[s, 2]})
    return rows


def cmd_forecast(opts: dict, cfg: RunConfig) -> int:
    fcfg = cfg.forecast()
    if opts.get("seed") is not None:
        fcfg = replace(fcfg, seed=opts["seed"])
    if opts.get("M") is not None:
        fcfg = replace(fcfg, M=opts["M"])
    if opts.get("at"):
        fcfg = replace(fcfg, origin=opts["at"])
    out = opts["out"]
    _write_manifest(out, "forecast", opts, cfg, {"sampling": fcfg.seed})
    hist = _load_history(opts["data"], opts.get("holidays"))
    bank = _model_bank(opts["models"], hist)
    k = hist.index_of(fcfg.origin)
    live = _forecast_models(bank, hist, k, fcfg.window_hours)
    weather = Weather.from_history(hist, k, fcfg.T)
    scfg = SamplerConfig(M=fcfg.M, T=fcfg.T, seed=fcfg.seed,
                         zero_variance=bool(opts.get("zero_variance")))
    scen = sample_trajectories(live, hist, k, weather, scfg)
    scen.to_csv(os.path.join(out, "trajectories.csv"))
    mt = mean_trajectory(live, hist, k, weather, fcfg.T)
    with open(os.path.join(out, "mean_trajectory.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "L_e_kwh", "L_h_kwh"])
        for s in range(fcfg.T):
            w.writerow([s, repr(float(mt.L_e[s])), repr(float(mt.L_h[s]))])
    print(f"sampled {scen.M} x {scen.T} trajectories at {fcfg.origin} "
          f"({scen.clipped} negative draws clipped)")
    if opts.get("solve_sp"):
        params = cfg.hub()
        tariffs = cfg.tariffs(len(hist), hist.timestamps).window(k, fcfg.T)
        problem = SPProblem(HubState.initial(params, k), params, tariffs, weather.irradiance,
                            SPConfig(T=fcfg.T))
        sol = solve_scenarios(problem, scen)
        scen.to_csv(os.path.join(out, "scenarios.csv"))
        dump_solution(sol, problem, scen, os.path.join(out, "sp_solution.json"))
        print(f"scenario program: {sol.status}, objective {sol.objective:.6f} CHF")
    if fcfg.quartile_start and fcfg.quartile_end:
        rows = quartile_report(bank, hist, hist.index_of(fcfg.quartile_start),
                               hist.index_of(fcfg.quartile_end), fcfg.T, fcfg.window_hours)
        with open(os.path.join(out, "quartiles.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "step", "n", "q25_pct", "q50_pct", "q75_pct"])
            for r in rows:
                w.writerow([r["kind"], r["step"], r["n"], repr(float(r["q25_pct"])),
                            repr(float(r["q50_pct"])), repr(float(r["q75_pct"]))])
    return 0


def _run_arm(args) -> dict:
    sim_cfg, data_path, holidays, models_dir, cfg_raw, out = args
    try:
        cfg = parse_config(cfg_raw)
        hist = _load_history(data_path, holidays)
        params = cfg.hub()
        tariffs = cfg.tariffs(len(hist), hist.timestamps)
        bank = _model_bank(models_dir, hist) if sim_cfg.controller != "pd_mpc" else None
        trace = run_closed_loop(sim_cfg, hist, params, tariffs, bank)
        trace.to_csv(os.path.join(out, f"trace_{sim_cfg.label}.csv"))
        summary = summarize(trace)
        summary["status"] = "ok"
    except Exception as err:  # isolate arms from each other
        summary = {"label": sim_cfg.label, "status": "failed", "error": str(err)}
    summary["config"] = sim_cfg.to_dict()
    write_summary(summary, os.path.join(out, f"summary_{sim_cfg.label}.json"))
    return summary


def cmd_simulate(opts: dict, cfg: RunConfig) -> int:
    scfg = cfg.simulate()
    if opts.get("seed") is not None:
        scfg = replace(scfg, seed=opts["seed"])
    if opts.get("M"):
        scfg = replace(scfg, M=tuple(_int_list(str(opts["M"]))))
    if opts.get("controllers"):
        names = [c.strip() for c in opts["controllers"].split(",") if c.strip()]
        bad = [c for c in names if c not in CONTROLLER_ALIASES]
        if bad:
            raise UsageError(f"unknown controller(s) {bad}; choose from pd, scenario, mean")
        scfg = replace(scfg, controllers=tuple(CONTROLLER_ALIASES[c] for c in names))
    out = opts["out"]
    _write_manifest(out, "simulate", opts, cfg, {"sampling": scfg.seed})
    base = SimulationConfig(start=scfg.start, hours=scfg.hours, T=scfg.T,
                            sampling_seed=scfg.seed, refresh_every=scfg.refresh_every,
                            window_hours=scfg.window_hours, rho=scfg.rho, mode=scfg.mode,
                            backend=scfg.backend, epigraph=scfg.epigraph,
                            terminal_weight=scfg.terminal_weight)
    arms = arm_configs(base, scfg.controllers, scfg.M)
    jobs = [(a, opts["data"], opts.get("holidays"), opts.get("models"), cfg.raw, out)
            for a in arms]
    n_jobs = max(1, int(opts.get("jobs") or 1))
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_run_arm, jobs))
    else:
        results = [_run_arm(j) for j in jobs]
    with open(os.path.join(out, "combined.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "controller", "M", "hours", "mean_cost_chf_per_h",
                    "violation_count", "cumulative_violation_kwh", "status"])
        for a, r in zip(arms, results):
            ok = r["status"] == "ok"
            w.writerow([a.label, a.controller, a.M if a.controller == "scenario" else "",
                        r.get("hours", ""),
                        repr(r["mean_cost_chf_per_h"]) if ok else "",
                        r.get("violation_count", ""),
                        repr(r["cumulative_violation_kwh"]) if ok else "", r["status"]])
    for r in results:
        if r["status"] == "ok":
            print(f"{r['label']:14s} mean cost {r['mean_cost_chf_per_h']:.4f} CHF/h  "
                  f"violations {r['violation_count']} ({r['cumulative_violation_kwh']:.2f} kWh)")
        else:
            print(f"{r['label']:14s} FAILED: {r['error']}", file=sys.stderr)
    return 0 if all(r["status"] == "ok" for r in results) else 1


def cmd_certify(opts: dict, cfg: RunConfig | None) -> int:
    beta = opts.get("beta")
    rel_tol, alpha = 1e-6, 0.9
    if cfg is not None and "guarantee" in cfg.raw:
        g = cfg.guarantee()
        beta = g.beta if beta is None else beta
        rel_tol, alpha = g.rel_tol, g.alpha
    if beta is None:
        raise UsageError("certify needs --beta or a [guarantee] config section")
    _write_manifest(opts["out"], "certify", opts, cfg, {})
    doc, problem = load_solution(opts["solution"])
    scen = ScenarioSet.from_csv(opts["scenarios"])
    if scenario_hash(scen) != doc["scenario_hash"]:
        raise UsageError("scenario file does not match the solution (hash mismatch)")
    ref = solve_scenarios(problem, scen)
    stored = np.concatenate([np.ravel(np.asarray(v, dtype=float)) for v in (
        *[doc["solution"]["setpoints"][f] for f in ref.setpoints.to_dict()],
        doc["solution"]["sigma_plus"], doc["solution"]["sigma_minus"])])
    if not same_solution(ref.shared_vector(), stored, 1e-6):
        log.warning("re-solved plan differs from the stored one; certifying the re-solve")
    res = certify(ref, scen, problem, GuaranteeConfig(beta=beta, alpha=alpha, rel_tol=rel_tol))
    res.write_json(os.path.join(opts["out"], "certificate.json"))
    print(f"s* = {res.s_star} of M = {res.M}")
    print(f"epsilon(s*) = {res.epsilon:.6g}" + ("  (vacuous: s* = M)" if res.vacuous else ""))
    print(f"log bound = {res.bound:.6g}")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "forecast": cmd_forecast,
            "simulate": cmd_simulate, "certify": cmd_certify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hubmpc", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=True, models=False):
        p.add_argument("--config")
        p.add_argument("--out")
        p.add_argument("--from-manifest")
        p.add_argument("--seed", type=int)
        if data:
            p.add_argument("--data")
            p.add_argument("--holidays")
        if models:
            p.add_argument("--models")
        return p

    common(sub.add_parser("gen-data", help="write synthetic demand and weather"), data=False)
    common(sub.add_parser("train", help="fit seasonal GP models"))
    p = common(sub.add_parser("forecast", help="sample demand scenarios"), models=True)
    p.add_argument("--at", help="forecast origin timestamp (overrides forecast.origin)")
    p.add_argument("--M", type=int)
    p.add_argument("--zero-variance", action="store_true")
    p.add_argument("--solve-sp", action="store_true")
    p = common(sub.add_parser("simulate", help="closed-loop runs"), models=True)
    p.add_argument("--controllers")
    p.add_argument("--M")
    p.add_argument("--jobs", type=int, default=1)
    p = common(sub.add_parser("certify", help="a-posteriori guarantee of a stored plan"),
               data=False)
    p.add_argument("--solution")
    p.add_argument("--scenarios")
    p.add_argument("--beta", type=float)
    return ap


PATH_OPTS = ("config", "out", "data", "holidays", "models", "solution", "scenarios")


def _resolve(ns: argparse.Namespace) -> tuple[dict, RunConfig | None]:
    cmd = ns.command
    if ns.from_manifest:
        with open(ns.from_manifest) as fh:
            man = json.load(fh)
        if man.get("command") != cmd:
            raise UsageError(f"manifest records command {man.get('command')!r}, not {cmd!r}")
        opts = dict(man["options"])
        if ns.out:
            opts["out"] = _abs(ns.out)
        cfg = parse_config(man["config"], man.get("config_path")) if man["config"] else None
        return opts, cfg
    opts = {k: v for k, v in vars(ns).items()
            if k not in ("command", "from_manifest", "verbose")}
    for k in PATH_OPTS:
        if k in opts:
            opts[k] = _abs(opts[k])
    if not opts.get("out"):
        raise UsageError("--out is required")
    need = {"train": ("data",), "forecast": ("data", "models"), "simulate": ("data",),
            "certify": ("solution", "scenarios")}.get(cmd, ())
    for k in need:
        if not opts.get(k):
            raise UsageError(f"--{k} is required for {cmd}")
    cfg = load_config(opts["config"]) if opts.get("config") else None
    if cfg is None and cmd != "certify":
        raise UsageError(f"--config is required for {cmd}")
    return opts, cfg


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as e:  # argparse usage errors
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts, cfg = _resolve(ns)
        if ns.command == "simulate" and not opts.get("models"):
            ctrls = opts.get("controllers") or ",".join(cfg.simulate().controllers)
            if any(CONTROLLER_ALIASES.get(c.strip()) != "pd_mpc" for c in ctrls.split(",")):
                raise UsageError("--models is required unless only pd_mpc is simulated")
        return COMMANDS[ns.command](opts, cfg)
    except (ConfigError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
