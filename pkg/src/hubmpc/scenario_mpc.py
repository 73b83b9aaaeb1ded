"""Scenario program for the hub and the receding-horizon step.

Decision layout (index = block offset + field * T + k)::

    shared  (15 T): p_pv, w_A..w_D, p_chp, q_chp, f_chp, p_hp, q_hp, q_gb,
                    f_gb, es_discharge, es_charge, es_level
    scenario i (5 T each): grid_buy, grid_sell, ts_discharge, ts_charge,
                    ts_level
    slacks  (2 T):  sigma_plus, sigma_minus (shared by all scenarios)
    optional:       t (epigraph), terminal TS shortfall per scenario

Rows: 7 T shared (CHP P/Q/F maps, CHP simplex, heat pump, boiler, ES
dynamics) and 5 T per scenario (electric balance, heat balance, TS
dynamics, soft TS lower bound, soft TS upper bound), plus M epigraph rows
and M terminal rows when enabled.

Objective: (1/M) sum_i sum_k grid cost_i,k + sum_k gas cost_k
+ rho * sum_k (sigma_plus_k + sigma_minus_k).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .hub_model import (HubParameters, HubState, RecourseVariables, SetPoints, Tariffs,
                        pv_output, stage_cost)
from .optimizer import (COMP_TOL, ComplementarityPair, LinearProgram, SolveResult,
                        solve_with_complementarity)
from .sampler import SamplerConfig, ScenarioSet, Weather, sample_trajectories

SHARED_FIELDS = ("p_pv", "w_A", "w_B", "w_C", "w_D", "p_chp", "q_chp", "f_chp", "p_hp",
                 "q_hp", "q_gb", "f_gb", "es_discharge", "es_charge", "es_level")
SCEN_FIELDS = ("grid_buy", "grid_sell", "ts_discharge", "ts_charge", "ts_level")
FLOW_CAP = 1e5  # kW box on grid and storage flows, only for LP boundedness
BALANCE_TOL = 1e-6


@dataclass(frozen=True)
class SPConfig:
    T: int = 24
    rho: float | None = None  # None: 10 x max buy price over the window
    epigraph: bool = False
    mode: str = "relax_first"
    backend: str = "highs"
    terminal_weight: float = 0.0
    dt: float = 1.0
    comp_tol: float = COMP_TOL
    node_limit: int = 20_000

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("horizon T must be at least 1")
        if self.rho is not None and self.rho <= 0:
            raise ValueError("slack weight rho must be positive")
        if self.terminal_weight < 0:
            raise ValueError("terminal_weight must be nonnegative")

    def slack_weight(self, tariffs: Tariffs, params: HubParameters) -> float:
        T = min(self.T, len(tariffs))
        pb, pg = tariffs.price_buy[:T], tariffs.price_gas[:T]
        rho = 10.0 * float(pb.max()) if self.rho is None else float(self.rho)
        floor = max(float(pb.max()), float(pg.max()) / params.eta_gb)
        if rho <= floor:
            raise ValueError(f"slack weight {rho} must exceed the dearest supply cost {floor}")
        return rho


@dataclass
class SPLayout:
    T: int
    M: int
    shared: dict  # field -> (T,) indices
    scen: dict  # field -> (M, T) indices
    sigma_plus: np.ndarray
    sigma_minus: np.ndarray
    t: int | None
    terminal: np.ndarray | None
    n_vars: int
    n_shared_rows: int
    n_scen_rows: int
    rho: float
    epigraph: bool = False

    @property
    def shared_block(self) -> np.ndarray:
        return np.concatenate([self.shared[f] for f in SHARED_FIELDS])

    def scenario_rows(self, i: int) -> np.ndarray:
        """Row indices that belong to scenario i (balances, TS, epigraph, terminal)."""
        base = self.n_shared_rows
        per = 5 * self.T
        rows = list(range(base + i * per, base + (i + 1) * per))
        extra = base + self.M * per
        if self.epigraph:
            rows.append(extra + i)
            extra += self.M
        if self.terminal is not None:
            rows.append(extra + i)
        return np.array(rows, dtype=np.int64)


def count_dimensions(T: int, M: int, epigraph: bool = False, terminal: bool = False):
    """(n_vars, n_rows) of the assembled program."""
    n = 15 * T + 5 * T * M + 2 * T + int(epigraph) + (M if terminal else 0)
    m = 7 * T + 5 * T * M + (M if epigraph else 0) + (M if terminal else 0)
    return n, m


class _Triplets:
    def __init__(self):
        self.r, self.c, self.v = [], [], []
        self.sense, self.rhs = [], []
        self.n_rows = 0

    def rows(self, n: int, sense: str, rhs) -> np.ndarray:
        idx = np.arange(self.n_rows, self.n_rows + n)
        self.n_rows += n
        self.sense.append(np.full(n, sense))
        self.rhs.append(np.broadcast_to(np.asarray(rhs, dtype=float), (n,)))
        return idx

    def add(self, rows, cols, vals):
        rows, cols = np.broadcast_arrays(np.asarray(rows), np.asarray(cols))
        vals = np.broadcast_to(np.asarray(vals, dtype=float), rows.shape)
        keep = vals != 0.0
        self.r.append(rows[keep].ravel())
        self.c.append(cols[keep].ravel())
        self.v.append(vals[keep].ravel())

    def arrays(self):
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)  # noqa
        return (cat(self.r, np.int64), cat(self.c, np.int64), cat(self.v, float),
                np.concatenate(self.sense) if self.sense else np.zeros(0, "<U1"),
                cat(self.rhs, float))


def build_scenario_program(state: HubState, params: HubParameters, tariffs: Tariffs,
                           scenarios: ScenarioSet, cfg: SPConfig, irradiance=None,
                           ) -> tuple[LinearProgram, list[ComplementarityPair], SPLayout]:
    """Assemble the scenario program; ``tariffs`` are indexed relative to the plan."""
    T, M, dt = cfg.T, scenarios.M, cfg.dt
    if scenarios.T != T:
        raise ValueError(f"scenarios have length {scenarios.T}, horizon is {T}")
    if len(tariffs) < T:
        raise ValueError(f"tariffs cover {len(tariffs)} steps, horizon needs {T}")
    irr = np.zeros(T) if irradiance is None else np.asarray(irradiance, dtype=float)[:T]
    if len(irr) < T:
        raise ValueError("irradiance forecast shorter than the horizon")
    rho = cfg.slack_weight(tariffs, params)
    pb, ps, pg = (np.asarray(a[:T]) for a in (tariffs.price_buy, tariffs.price_sell,
                                               tariffs.price_gas))
    Lh, Le = scenarios.L_h, scenarios.L_e
    ks = np.arange(T)

    shared = {f: j * T + ks for j, f in enumerate(SHARED_FIELDS)}
    off = 15 * T
    scen = {f: off + (np.arange(M)[:, None] * 5 + j) * T + ks[None, :]
            for j, f in enumerate(SCEN_FIELDS)}
    off += 5 * T * M
    sig_p, sig_m = off + ks, off + T + ks
    off += 2 * T
    t_idx = None
    if cfg.epigraph:
        t_idx, off = off, off + 1
    term = None
    if cfg.terminal_weight > 0:
        term, off = off + np.arange(M), off + M
    n = off

    lb, ub, cost = np.zeros(n), np.full(n, np.inf), np.zeros(n)
    pv_cap = np.minimum(pv_output(irr, params), params.p_pv_max)
    lb[shared["p_pv"]] = np.minimum(params.p_pv_min, pv_cap)
    ub[shared["p_pv"]] = pv_cap
    for f in ("w_A", "w_B", "w_C", "w_D"):
        ub[shared[f]] = 1.0
    for f, lo, hi in (("p_chp", params.p_chp_min, params.p_chp_max),
                      ("q_chp", params.q_chp_min, params.q_chp_max),
                      ("q_hp", params.q_hp_min, params.q_hp_max),
                      ("q_gb", params.q_gb_min, params.q_gb_max),
                      ("es_level", params.es_min, params.es_max)):
        lb[shared[f]], ub[shared[f]] = lo, hi
    for f in ("es_discharge", "es_charge"):
        ub[shared[f]] = FLOW_CAP
    for f in ("grid_buy", "grid_sell", "ts_discharge", "ts_charge"):
        ub[scen[f]] = FLOW_CAP
    lb[scen["ts_level"]] = -np.inf

    gas = pg * dt
    if cfg.epigraph:
        cost[t_idx] = 1.0
    else:
        cost[shared["f_chp"]] = gas
        cost[shared["f_gb"]] = gas
        if M:
            cost[scen["grid_buy"]] = pb * dt / M
            cost[scen["grid_sell"]] = -ps * dt / M
    cost[sig_p] = rho
    cost[sig_m] = rho
    if term is not None:
        cost[term] = cfg.terminal_weight / max(M, 1)

    tr = _Triplets()
    S = shared
    # CHP maps and simplex
    r = tr.rows(T, "E", 0.0)
    tr.add(r, S["p_chp"], 1.0)
    for j, f in enumerate(("w_A", "w_B", "w_C", "w_D")):
        tr.add(r, S[f], -params.chp_p[j])
    r = tr.rows(T, "E", 0.0)
    tr.add(r, S["q_chp"], 1.0)
    for j, f in enumerate(("w_A", "w_B", "w_C", "w_D")):
        tr.add(r, S[f], -params.chp_q[j])
    r = tr.rows(T, "E", 0.0)
    tr.add(r, S["f_chp"], 1.0)
    tr.add(r, S["p_chp"], -1.0 / params.eta_chp)
    r = tr.rows(T, "E", 1.0)
    for f in ("w_A", "w_B", "w_C", "w_D"):
        tr.add(r, S[f], 1.0)
    r = tr.rows(T, "E", 0.0)
    tr.add(r, S["q_hp"], 1.0)
    tr.add(r, S["p_hp"], -params.cop)
    r = tr.rows(T, "E", 0.0)
    tr.add(r, S["q_gb"], 1.0)
    tr.add(r, S["f_gb"], -params.eta_gb)
    # ES dynamics
    rhs = np.zeros(T)
    rhs[0] = params.gamma_es * state.es_level
    r = tr.rows(T, "E", rhs)
    tr.add(r, S["es_level"], 1.0)
    tr.add(r[1:], S["es_level"][:-1], -params.gamma_es)
    tr.add(r, S["es_charge"], -params.eta_es * dt)
    tr.add(r, S["es_discharge"], dt / params.eta_es)
    n_shared_rows = tr.n_rows

    for i in range(M):
        g = {f: scen[f][i] for f in SCEN_FIELDS}
        r = tr.rows(T, "E", Le[i])
        for f, v in (("p_pv", 1.0), ("p_chp", 1.0), ("p_hp", -1.0), ("es_discharge", 1.0),
                     ("es_charge", -1.0)):
            tr.add(r, S[f], v)
        tr.add(r, g["grid_buy"], 1.0)
        tr.add(r, g["grid_sell"], -1.0)
        r = tr.rows(T, "E", Lh[i])
        for f in ("q_gb", "q_chp", "q_hp"):
            tr.add(r, S[f], 1.0)
        tr.add(r, g["ts_discharge"], 1.0)
        tr.add(r, g["ts_charge"], -1.0)
        rhs = np.zeros(T)
        rhs[0] = params.gamma_ts * state.ts_level
        r = tr.rows(T, "E", rhs)
        tr.add(r, g["ts_level"], 1.0)
        tr.add(r[1:], g["ts_level"][:-1], -params.gamma_ts)
        tr.add(r, g["ts_charge"], -params.eta_ts * dt)
        tr.add(r, g["ts_discharge"], dt / params.eta_ts)
        r = tr.rows(T, "G", params.ts_min)
        tr.add(r, g["ts_level"], 1.0)
        tr.add(r, sig_m, 1.0)
        r = tr.rows(T, "L", params.ts_max)
        tr.add(r, g["ts_level"], 1.0)
        tr.add(r, sig_p, -1.0)
    n_scen_rows = tr.n_rows - n_shared_rows

    if cfg.epigraph:
        for i in range(M):
            r = tr.rows(1, "L", 0.0)
            tr.add(r, scen["grid_buy"][i], pb * dt)
            tr.add(r, scen["grid_sell"][i], -ps * dt)
            tr.add(r, S["f_chp"], gas)
            tr.add(r, S["f_gb"], gas)
            tr.add(r, t_idx, -1.0)
    if term is not None:
        for i in range(M):
            r = tr.rows(1, "G", state.ts_level)
            tr.add(r, scen["ts_level"][i][-1:], 1.0)
            tr.add(r, term[i], 1.0)

    rows, cols, vals, senses, rhs_all = tr.arrays()
    names = [f"{f}[{k}]" for f in SHARED_FIELDS for k in range(T)]
    names += [f"{f}[{i},{k}]" for i in range(M) for f in SCEN_FIELDS for k in range(T)]
    names += [f"sigma_plus[{k}]" for k in range(T)] + [f"sigma_minus[{k}]" for k in range(T)]
    if cfg.epigraph:
        names.append("t")
    if term is not None:
        names += [f"terminal[{i}]" for i in range(M)]
    lp = LinearProgram(rows, cols, vals, senses, rhs_all, lb, ub, cost, names)

    pairs = [ComplementarityPair(int(a), int(b))
             for a, b in zip(S["es_discharge"], S["es_charge"])]
    for i in range(M):
        pairs += [ComplementarityPair(int(a), int(b))
                  for a, b in zip(scen["grid_buy"][i], scen["grid_sell"][i])]
        pairs += [ComplementarityPair(int(a), int(b))
                  for a, b in zip(scen["ts_discharge"][i], scen["ts_charge"][i])]
    layout = SPLayout(T, M, shared, scen, sig_p, sig_m, t_idx, term, n, n_shared_rows,
                      n_scen_rows, rho, cfg.epigraph)
    return lp, pairs, layout


def epigraph_reformulate(state: HubState, params: HubParameters, tariffs: Tariffs,
                         scenarios: ScenarioSet, cfg: SPConfig, irradiance=None):
    """The worst-case (epigraph) variant of the same program."""
    return build_scenario_program(state, params, tariffs, scenarios,
                                  replace(cfg, epigraph=True), irradiance)


@dataclass
class SPProblem:
    """Everything needed to rebuild a scenario program."""

    state: HubState
    params: HubParameters
    tariffs: Tariffs
    irradiance: np.ndarray
    cfg: SPConfig

    def build(self, scenarios: ScenarioSet):
        return build_scenario_program(self.state, self.params, self.tariffs, scenarios,
                                      self.cfg, self.irradiance)

    def to_dict(self) -> dict:
        return {"state": asdict(self.state), "params": self.params.to_dict(),
                "tariffs": {"price_buy": self.tariffs.price_buy.tolist(),
                            "price_sell": self.tariffs.price_sell.tolist(),
                            "price_gas": self.tariffs.price_gas.tolist()},
                "irradiance": np.asarray(self.irradiance).tolist(),
                "config": asdict(self.cfg)}

    @classmethod
    def from_dict(cls, d: dict) -> "SPProblem":
        t = d["tariffs"]
        return cls(HubState(**d["state"]), HubParameters.from_dict(d["params"]),
                   Tariffs(t["price_buy"], t["price_sell"], t["price_gas"]),
                   np.asarray(d["irradiance"], dtype=float), SPConfig(**d["config"]))


@dataclass
class SPSolution:
    setpoints: SetPoints
    recourse: list[RecourseVariables]
    sigma_plus: np.ndarray
    sigma_minus: np.ndarray
    objective: float
    mean_cost: float
    scenario_costs: np.ndarray
    status: str
    degraded: bool = False
    stats: dict = field(default_factory=dict)
    x: np.ndarray | None = field(default=None, repr=False)
    t: float | None = None

    def shared_vector(self) -> np.ndarray:
        """Shared set points followed by the slacks."""
        return np.concatenate([self.setpoints.as_vector(), self.sigma_plus, self.sigma_minus])

    def to_dict(self) -> dict:
        return {"status": self.status, "degraded": self.degraded,
                "objective": self.objective, "mean_cost": self.mean_cost,
                "scenario_costs": np.asarray(self.scenario_costs).tolist(),
                "epigraph_t": self.t,
                "setpoints": self.setpoints.to_dict(),
                "recourse": [rc.to_dict() for rc in self.recourse],
                "sigma_plus": self.sigma_plus.tolist(), "sigma_minus": self.sigma_minus.tolist(),
                "solver": self.stats}


def extract_solution(x: np.ndarray, layout: SPLayout) -> tuple[SetPoints, list, np.ndarray,
                                                                np.ndarray]:
    g = lambda f: x[layout.shared[f]].copy()  # noqa: E731
    w = np.column_stack([g(f) for f in ("w_A", "w_B", "w_C", "w_D")])
    sp = SetPoints(g("p_pv"), w, g("p_chp"), g("q_chp"), g("f_chp"), g("p_hp"), g("q_hp"),
                   g("q_gb"), g("f_gb"), g("es_discharge"), g("es_charge"), g("es_level"))
    rec = [RecourseVariables(*(x[layout.scen[f][i]].copy() for f in SCEN_FIELDS))
           for i in range(layout.M)]
    return sp, rec, x[layout.sigma_plus].copy(), x[layout.sigma_minus].copy()


def check_solution(sol: SPSolution, scenarios: ScenarioSet, params: HubParameters,
                   tol: float = BALANCE_TOL) -> None:
    """Raise if slacks, soft TS bounds or balances are off."""
    if (sol.sigma_plus < -tol).any() or (sol.sigma_minus < -tol).any():
        raise AssertionError("negative slack")
    sp = sol.setpoints
    for i, rc in enumerate(sol.recourse):
        lo = params.ts_min - sol.sigma_minus - tol
        hi = params.ts_max + sol.sigma_plus + tol
        if (rc.ts_level < lo).any() or (rc.ts_level > hi).any():
            raise AssertionError(f"scenario {i}: TS level outside softened bounds")
        for k in range(sp.horizon):
            scale = 1.0 + max(scenarios.L_e[i, k], scenarios.L_h[i, k]) * 1e-3
            re = (sp.p_pv[k] + sp.p_chp[k] - sp.p_hp[k] + rc.grid_buy[k] - rc.grid_sell[k]
                  + sp.es_discharge[k] - sp.es_charge[k] - scenarios.L_e[i, k])
            rh = (sp.q_gb[k] + sp.q_chp[k] + sp.q_hp[k] + rc.ts_discharge[k]
                  - rc.ts_charge[k] - scenarios.L_h[i, k])
            if abs(re) > tol * scale or abs(rh) > tol * scale:
                raise AssertionError(f"scenario {i} step {k}: balance residual "
                                     f"({re:.3g}, {rh:.3g})")


def solve_sp(lp: LinearProgram, pairs, layout: SPLayout, cfg: SPConfig,
             scenarios: ScenarioSet | None = None, params: HubParameters | None = None,
             tariffs: Tariffs | None = None) -> SPSolution:
    """Solve an assembled program and unpack it.

    With ``scenarios``, ``params`` and ``tariffs`` given, the solution's
    invariants are verified and per-scenario costs recomputed from the
    primal values.
    """
    res: SolveResult = solve_with_complementarity(lp, pairs, cfg.mode, cfg.backend,
                                                  cfg.comp_tol, cfg.node_limit)
    stats = {"status": res.status, "nodes": res.nodes, "iterations": res.iterations,
             "max_depth": res.max_depth, "pairs_branched": res.pairs_branched}
    if res.x is None:
        raise SolveFailed(res.status, stats)
    sp, rec, sgp, sgm = extract_solution(res.x, layout)
    degraded = res.status != "optimal"
    if tariffs is not None:
        costs = np.array([sum(stage_cost(sp, rc, tariffs, k, cfg.dt) for k in range(layout.T))
                          for rc in rec])
    else:
        costs = np.full(layout.M, np.nan)
    mean_cost = float(costs.mean()) if layout.M else float(
        np.dot(lp.cost[layout.shared["f_chp"]], sp.f_chp)
        + np.dot(lp.cost[layout.shared["f_gb"]], sp.f_gb))
    sol = SPSolution(sp, rec, sgp, sgm, float(res.objective), mean_cost, costs, res.status,
                     degraded, stats, res.x,
                     None if layout.t is None else float(res.x[layout.t]))
    if scenarios is not None and params is not None:
        check_solution(sol, scenarios, params)
    return sol


class SolveFailed(RuntimeError):
    def __init__(self, status: str, stats: dict):
        super().__init__(f"scenario program not solved: {status}")
        self.status = status
        self.stats = stats


def solve_scenarios(problem: SPProblem, scenarios: ScenarioSet, check: bool = True) -> SPSolution:
    lp, pairs, layout = problem.build(scenarios)
    return solve_sp(lp, pairs, layout, problem.cfg, scenarios if check else None,
                    problem.params, problem.tariffs)


def scenario_hash(scenarios: ScenarioSet) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(scenarios.L_e.shape, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(scenarios.L_e, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(scenarios.L_h, dtype="<f8").tobytes())
    return h.hexdigest()


def dump_solution(sol: SPSolution, problem: SPProblem, scenarios: ScenarioSet, path) -> None:
    doc = {"format_version": 1, "scenario_hash": scenario_hash(scenarios),
           "M": scenarios.M, "T": scenarios.T, "problem": problem.to_dict(),
           "solution": sol.to_dict()}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_solution(path) -> tuple[dict, SPProblem]:
    with open(path) as fh:
        doc = json.load(fh)
    return doc, SPProblem.from_dict(doc["problem"])


@dataclass
class StepResult:
    applied: SetPoints
    solution: SPSolution | None
    scenarios: ScenarioSet
    fallback: bool = False
    error: str | None = None


def mpc_step(state: HubState, params: HubParameters, tariffs: Tariffs, models, history,
             weather: Weather, cfg: SPConfig, sampler_cfg: SamplerConfig,
             previous: SPSolution | None = None, shift: int = 1) -> StepResult:
    """One receding-horizon step at hour ``state.clock``.

    Samples scenarios, solves the program and returns the first-step set
    points. On solver failure the previous plan, advanced by ``shift``
    steps, is applied instead and the result is flagged.
    """
    k = state.clock
    scen = sample_trajectories(models, history, k, weather, replace(sampler_cfg, T=cfg.T))
    return plan_step(state, params, tariffs.window(k, cfg.T), scen, weather.irradiance, cfg,
                     previous, shift)


def plan_step(state: HubState, params: HubParameters, tariffs_window: Tariffs,
              scenarios: ScenarioSet, irradiance, cfg: SPConfig,
              previous: SPSolution | None = None, shift: int = 1) -> StepResult:
    """Solve on given scenarios and return the applicable first step."""
    try:
        lp, pairs, layout = build_scenario_program(state, params, tariffs_window, scenarios,
                                                   cfg, irradiance)
        sol = solve_sp(lp, pairs, layout, cfg, scenarios, params, tariffs_window)
        if sol.status != "optimal":
            raise SolveFailed(sol.status, sol.stats)
        return StepResult(sol.setpoints.step(0), sol, scenarios)
    except (SolveFailed, AssertionError, RuntimeError) as err:
        if previous is None or shift >= previous.setpoints.horizon:
            raise
        return StepResult(previous.setpoints.step(shift), None, scenarios, True, str(err))
