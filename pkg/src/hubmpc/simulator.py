"""Closed-loop receding-horizon simulation of the hub.

Each hour the controller plans over T hours, the first-step set points are
applied, and the true demand is settled with the realization rule:

* electricity: any imbalance is bought from / sold to the grid;
* heat: surplus charges the thermal storage, deficit discharges it, both
  saturating at the storage bounds. What the storage cannot absorb is
  dumped heat; what it cannot supply is unserved heat. Either one is a
  thermal-constraint violation, measured in kWh.

Violations are counted per hour (an hour with more than 1e-6 kWh counts once).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np

from .features import QUANTILE_WINDOW, DemandHistory, select_seasonal_model
from .gp_forecast import GPModel, condition_on_history
from .hub_model import HubParameters, HubState, SetPoints, Tariffs
from .sampler import SamplerConfig, ScenarioSet, Weather, mean_trajectory, sample_trajectories
from .scenario_mpc import SPConfig, SPSolution, plan_step

log = logging.getLogger(__name__)

CONTROLLERS = ("scenario", "pd_mpc", "mean_mpc")
VIOLATION_TOL = 1e-6
HIST_EDGES = (0.0, 1.0, 5.0, 10.0, 25.0, 50.0, 100.0, 250.0, np.inf)  # kWh
MAX_CONSECUTIVE_FAILURES = 3


class SimulationAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    start: str
    hours: int
    controller: str = "scenario"
    M: int = 10
    T: int = 24
    sampling_seed: int = 0
    data_seed: int = 0
    refresh_every: int = 24
    window_hours: int = 28 * 24
    rho: float | None = None
    mode: str = "relax_first"
    backend: str = "highs"
    epigraph: bool = False
    terminal_weight: float = 0.0
    antithetic: bool = False
    es_init: float | None = None
    ts_init: float | None = None

    def __post_init__(self):
        if self.hours < 1:
            raise ValueError("simulation must cover at least one hour (end > start)")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.controller == "scenario" and self.M < 1:
            raise ValueError("scenario controller needs M >= 1")
        if self.refresh_every < 1 or self.window_hours < 1:
            raise ValueError("refresh_every and window_hours must be positive")

    @property
    def label(self) -> str:
        return f"scenario_M{self.M}" if self.controller == "scenario" else self.controller

    def sp_config(self) -> SPConfig:
        return SPConfig(T=self.T, rho=self.rho, epigraph=self.epigraph, mode=self.mode,
                        backend=self.backend, terminal_weight=self.terminal_weight)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Realization:
    grid_buy: float
    grid_sell: float
    es_discharge: float
    es_charge: float
    ts_discharge: float
    ts_charge: float
    dumped_heat: float
    unserved_heat: float
    ledger_e: float
    ledger_h: float
    es_adjusted: bool = False

    @property
    def violation(self) -> float:
        return self.dumped_heat + self.unserved_heat


def _first(sp: SetPoints, name: str) -> float:
    return float(np.asarray(getattr(sp, name)).ravel()[0])


def realize_step(applied: SetPoints, L_e: float, L_h: float, state: HubState,
                 params: HubParameters, prices: tuple[float, float, float], dt: float = 1.0,
                 ) -> tuple[Realization, HubState, float]:
    """Settle one hour of true demand against applied set points.

    ``prices`` = (buy, sell, gas) for this hour. Returns the realized flows,
    the next state and the stage cost in CHF.
    """
    g = lambda name: _first(applied, name)  # noqa: E731
    # ES follows the plan; flows are trimmed only if a stale plan would breach its bounds.
    dis, ch = max(g("es_discharge"), 0.0), max(g("es_charge"), 0.0)
    ge, ee = params.gamma_es, params.eta_es
    lvl = ge * state.es_level + ee * ch * dt - dis * dt / ee
    adjusted = False
    if lvl > params.es_max + 1e-9:
        ch = max(0.0, (params.es_max - ge * state.es_level + dis * dt / ee) / (ee * dt))
        adjusted = True
    elif lvl < params.es_min - 1e-9:
        dis = max(0.0, (ge * state.es_level + ee * ch * dt - params.es_min) * ee / dt)
        if ge * state.es_level + ee * ch * dt - dis * dt / ee < params.es_min:
            ch = (params.es_min - ge * state.es_level + dis * dt / ee) / (ee * dt)
        adjusted = True
    if adjusted:
        lvl = ge * state.es_level + ee * ch * dt - dis * dt / ee
    es_level = min(max(lvl, params.es_min), params.es_max)

    supply_e = g("p_pv") + g("p_chp") - g("p_hp") + dis - ch
    net_e = supply_e - L_e
    buy, sell = max(-net_e, 0.0), max(net_e, 0.0)

    prod_h = g("q_gb") + g("q_chp") + g("q_hp")
    net_h = prod_h - L_h
    gt, et = params.gamma_ts, params.eta_ts
    decayed = gt * state.ts_level
    ts_ch = ts_dis = dump = unserved = 0.0
    if net_h >= 0:
        room = max((params.ts_max - decayed) / (et * dt), 0.0)
        ts_ch = min(net_h, room)
        dump = net_h - ts_ch
    else:
        avail = max((decayed - params.ts_min) * et / dt, 0.0)
        ts_dis = min(-net_h, avail)
        unserved = -net_h - ts_dis
    ts_level = decayed + et * ts_ch * dt - ts_dis * dt / et
    ts_level = min(max(ts_level, params.ts_min), params.ts_max)  # round-off only

    ledger_e = (g("p_pv") + g("p_chp") + dis + buy) - (L_e + g("p_hp") + ch + sell)
    ledger_h = (prod_h + ts_dis) - (L_h + ts_ch + dump - unserved)
    pb, ps, pg = prices
    cost = dt * (pb * buy - ps * sell + pg * (g("f_chp") + g("f_gb")))
    real = Realization(buy, sell, dis, ch, ts_dis, ts_ch, dump * dt, unserved * dt,
                       ledger_e, ledger_h, adjusted)
    return real, HubState(es_level, ts_level, state.clock + 1), float(cost)


TRACE_COLUMNS = ("hour", "timestamp", "L_e", "L_h", "p_pv", "p_chp", "q_chp", "f_chp", "p_hp",
                 "q_hp", "q_gb", "f_gb", "es_discharge", "es_charge", "es_level", "grid_buy",
                 "grid_sell", "ts_discharge", "ts_charge", "ts_level", "dumped_heat",
                 "unserved_heat", "violation_kwh", "plan_slack_kwh", "cost_chf", "ledger_e",
                 "ledger_h", "fallback", "clipped", "bnb_nodes")


@dataclass
class ClosedLoopTrace:
    label: str
    rows: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    aborted: str | None = None

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in TRACE_COLUMNS])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


ModelBank = Mapping[str, Mapping[str, GPModel]]


def _season_models(models: ModelBank, ts) -> tuple[str, Mapping[str, GPModel]]:
    if "electric" in models and "heat" in models:
        return "all", models  # one model pair for every season
    season = select_seasonal_model(ts)
    if season not in models:
        raise KeyError(f"no trained models for season {season!r}")
    return season, models[season]


def run_closed_loop(cfg: SimulationConfig, history: DemandHistory, params: HubParameters,
                    tariffs: Tariffs, models: ModelBank | None = None,
                    state: HubState | None = None) -> ClosedLoopTrace:
    """Hourly closed loop from ``cfg.start`` for ``cfg.hours`` hours.

    ``tariffs`` are indexed by history row. ``models`` maps season to a
    (electric, heat) model pair, or is a single pair used all year.
    """
    k0 = history.index_of(cfg.start)
    if k0 < QUANTILE_WINDOW:
        raise ValueError(f"first controlled hour needs {QUANTILE_WINDOW} h of feature history, "
                         f"data start leaves {k0}")
    need = k0 + cfg.hours + cfg.T - 1
    if need > len(history) or need > len(tariffs):
        raise ValueError(f"data must cover rows up to {need}; history has {len(history)}, "
                         f"tariffs {len(tariffs)}")
    if cfg.controller != "pd_mpc" and models is None:
        raise ValueError(f"{cfg.controller} controller needs trained models")
    if state is None:
        init = HubState.initial(params, k0)
        state = HubState(init.es_level if cfg.es_init is None else cfg.es_init,
                         init.ts_level if cfg.ts_init is None else cfg.ts_init, k0)
    state.check(params)

    spc = cfg.sp_config()
    scfg = SamplerConfig(M=max(cfg.M, 1), T=cfg.T, seed=cfg.sampling_seed,
                         antithetic=cfg.antithetic)
    trace = ClosedLoopTrace(cfg.label, config=cfg.to_dict())
    live: dict = {}
    live_key = None
    last_refresh = None
    previous: SPSolution | None = None
    since_plan = 0
    failures = 0

    for h in range(cfg.hours):
        k = k0 + h
        ts = history.timestamps[k]
        weather = Weather.from_history(history, k, cfg.T)
        clipped = 0
        if cfg.controller == "pd_mpc":
            scen = ScenarioSet(history.L_e[k:k + cfg.T][None], history.L_h[k:k + cfg.T][None])
        else:
            season, pair = _season_models(models, ts)
            if live_key != season or last_refresh is None or k - last_refresh >= cfg.refresh_every:
                live = {kind: condition_on_history(pair[kind], history, k, cfg.window_hours)
                        for kind in ("electric", "heat")}
                live_key, last_refresh = season, k
            if cfg.controller == "mean_mpc":
                mt = mean_trajectory(live, history, k, weather, cfg.T)
                scen = ScenarioSet(mt.L_e[None], mt.L_h[None])
            else:
                scen = sample_trajectories(live, history, k, weather, scfg)
                clipped = scen.clipped
        try:
            step = plan_step(state, params, tariffs.window(k, cfg.T), scen, weather.irradiance,
                             spc, previous, since_plan + 1)
        except Exception as err:  # no usable fallback
            failures += 1
            log.warning("hour %d: planning failed without fallback: %s", k, err)
            trace.aborted = f"hour {k}: {err}"
            raise SimulationAborted(trace.aborted) from err
        if step.fallback:
            failures += 1
            since_plan += 1
            log.warning("hour %d: solver failure, applying shifted plan (%s)", k, step.error)
            if failures >= MAX_CONSECUTIVE_FAILURES:
                trace.aborted = f"{failures} consecutive solver failures ending at hour {k}"
                raise SimulationAborted(trace.aborted)
        else:
            failures = 0
            since_plan = 0
            previous = step.solution
        applied = step.applied
        prices = (tariffs.price_buy[k], tariffs.price_sell[k], tariffs.price_gas[k])
        real, state, cost = realize_step(applied, history.L_e[k], history.L_h[k], state,
                                         params, prices)
        sol = step.solution
        row = {"hour": k, "timestamp": str(ts), "L_e": history.L_e[k], "L_h": history.L_h[k]}
        for name in ("p_pv", "p_chp", "q_chp", "f_chp", "p_hp", "q_hp", "q_gb", "f_gb"):
            row[name] = _first(applied, name)
        row.update(es_discharge=real.es_discharge, es_charge=real.es_charge,
                   es_level=state.es_level, grid_buy=real.grid_buy, grid_sell=real.grid_sell,
                   ts_discharge=real.ts_discharge, ts_charge=real.ts_charge,
                   ts_level=state.ts_level, dumped_heat=real.dumped_heat,
                   unserved_heat=real.unserved_heat, violation_kwh=real.violation,
                   plan_slack_kwh=(float(sol.sigma_plus.sum() + sol.sigma_minus.sum())
                                   if sol is not None else 0.0),
                   cost_chf=cost, ledger_e=real.ledger_e, ledger_h=real.ledger_h,
                   fallback=step.fallback, clipped=clipped,
                   bnb_nodes=sol.stats.get("nodes", 0) if sol is not None else 0)
        trace.rows.append(row)
    return trace


def summarize(trace: ClosedLoopTrace, edges=HIST_EDGES) -> dict:
    """Run-level statistics of a finished trace."""
    if not len(trace):
        raise ValueError("cannot summarize an empty trace")
    cost = trace.column("cost_chf")
    viol = trace.column("violation_kwh")
    hits = viol > VIOLATION_TOL
    counts, _ = np.histogram(viol[hits], bins=np.asarray(edges, dtype=float))
    n_days = int(np.ceil(len(cost) / 24))
    daily = [float(cost[24 * d:24 * (d + 1)].sum()) for d in range(n_days)]
    le, lh = trace.column("ledger_e"), trace.column("ledger_h")
    throughput = float((trace.column("L_e") + trace.column("L_h") + trace.column("p_chp")
                        + trace.column("q_chp") + trace.column("q_gb") + trace.column("q_hp")
                        + trace.column("p_pv") + trace.column("grid_buy")
                        + trace.column("grid_sell") + trace.column("ts_charge")
                        + trace.column("ts_discharge")).sum())
    return {
        "label": trace.label,
        "hours": len(cost),
        "mean_cost_chf_per_h": float(cost.mean()),
        "total_cost_chf": float(cost.sum()),
        "violation_count": int(hits.sum()),
        "violation_counting": "per hour",
        "cumulative_violation_kwh": float(viol[hits].sum()),
        "unserved_heat_kwh": float(trace.column("unserved_heat").sum()),
        "dumped_heat_kwh": float(trace.column("dumped_heat").sum()),
        "histogram_edges_kwh": [float(e) if np.isfinite(e) else "inf" for e in edges],
        "histogram_counts": counts.astype(int).tolist(),
        "daily_cost_chf": daily,
        "fallback_hours": int(trace.column("fallback").astype(bool).sum()),
        "clipped_samples": int(trace.column("clipped").sum()),
        "max_hourly_ledger_residual": float(max(np.abs(le).max(), np.abs(lh).max())),
        "run_ledger_residual": float(abs(le.sum()) + abs(lh.sum())),
        "throughput_kwh": throughput,
        "aborted": trace.aborted,
    }


def write_summary(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")


def arm_configs(base: SimulationConfig, controllers, Ms) -> list[SimulationConfig]:
    """One config per arm: each scenario M, plus pd_mpc / mean_mpc once."""
    out = []
    for c in controllers:
        if c == "scenario":
            out += [replace(base, controller="scenario", M=int(m)) for m in Ms]
        else:
            out.append(replace(base, controller=c))
    return out
