"""A-posteriori scenario guarantees.

For a program solved on M i.i.d. scenarios whose optimal solution is
already fixed by a subsample of s of them, the violation probability of
the solution exceeds

    eps(s) = 1 - (beta / (M * C(M, s)))**(1 / (M - s)),   eps(M) = 1,

with probability at most beta over the draw of the M scenarios. The
statement is about the scenario-generating distribution (here: the GP
sampler), not the true demand process.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from .hub_model import HubParameters
from .sampler import ScenarioSet
from .scenario_mpc import SPProblem, SPSolution, solve_scenarios


@dataclass(frozen=True)
class GuaranteeConfig:
    beta: float = 0.05
    alpha: float = 0.9  # target joint satisfaction level, reported only
    rel_tol: float = 1e-6
    shuffle_seed: int | None = None

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")


@dataclass
class GuaranteeResult:
    s_star: int
    M: int
    beta: float
    epsilon: float
    bound: float
    removed: list[int] = field(default_factory=list)
    epigraph_active: bool = False
    solves: int = 0

    @property
    def vacuous(self) -> bool:
        return self.s_star >= self.M

    def to_dict(self) -> dict:
        return {"beta": self.beta, "M": self.M, "s_star": self.s_star,
                "epsilon": self.epsilon, "bound": self.bound,
                "removed_indices": list(self.removed), "epigraph_active": self.epigraph_active,
                "vacuous": self.vacuous,
                "statement": "with confidence 1 - beta over the sampled scenarios, the "
                             "probability under the scenario-generating distribution that "
                             "the plan violates a scenario constraint is at most epsilon"}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def log_binom(M: int, s: int) -> float:
    return float(gammaln(M + 1) - gammaln(s + 1) - gammaln(M - s + 1))


def _check(s: int, M: int, beta: float):
    if M < 1 or not 0 <= s <= M:
        raise ValueError(f"need 0 <= s <= M with M >= 1, got s={s}, M={M}")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")


def epsilon_closed_form(s: int, M: int, beta: float) -> float:
    _check(s, M, beta)
    if s == M:
        return 1.0
    log_term = (np.log(beta) - np.log(M) - log_binom(M, s)) / (M - s)
    return float(-np.expm1(log_term))


def epsilon_bound(s: int, M: int, beta: float) -> float:
    """(log(1/beta) + log(M C(M, s))) / (M - s)."""
    _check(s, M, beta)
    if s == M:
        raise ValueError("bound undefined for s = M")
    return float((-np.log(beta) + np.log(M) + log_binom(M, s)) / (M - s))


def same_solution(a: np.ndarray, b: np.ndarray, rel_tol: float) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return False
    scale = max(1.0, float(np.max(np.abs(b))) if b.size else 1.0)
    return bool(np.max(np.abs(a - b), initial=0.0) <= rel_tol * scale)


def greedy_support(solve_fn: Callable[[np.ndarray], np.ndarray], M: int,
                   reference: np.ndarray, rel_tol: float = 1e-6,
                   order: Sequence[int] | None = None) -> tuple[list[int], int]:
    """Single greedy removal pass.

    ``solve_fn(kept_indices)`` returns the decision vector compared against
    ``reference``. Returns (removed indices in order, number of solves).
    """
    order = range(M) if order is None else order
    removed: list[int] = []
    solves = 0
    for i in order:
        trial = set(removed) | {int(i)}
        kept = np.array([j for j in range(M) if j not in trial], dtype=int)
        solves += 1
        try:
            v = solve_fn(kept)
        except Exception as err:
            raise RuntimeError(f"re-solve without scenarios {sorted(trial)} failed "
                               f"after {solves} solves; confirmed removals {removed}") from err
        if same_solution(v, reference, rel_tol):
            removed.append(int(i))
    return removed, solves


def find_support_subsample(solve_fn: Callable[[ScenarioSet], SPSolution],
                           scenarios: ScenarioSet, reference: SPSolution,
                           cfg: GuaranteeConfig, epigraph: bool = False) -> GuaranteeResult:
    """Greedy irreducible-support superset of a solved scenario program.

    Solutions are compared on the shared set points and slacks only.
    """
    M = scenarios.M
    order = np.arange(M)
    if cfg.shuffle_seed is not None:
        order = np.random.default_rng(cfg.shuffle_seed).permutation(M)
    ref = reference.shared_vector()
    removed, solves = greedy_support(lambda kept: solve_fn(scenarios.subset(kept)).shared_vector(),
                                     M, ref, cfg.rel_tol, order)
    s = M - len(removed)
    eps = epsilon_closed_form(s, M, cfg.beta)
    bound = epsilon_bound(s, M, cfg.beta) if s < M else float("inf")
    return GuaranteeResult(s, M, cfg.beta, eps, bound, removed, epigraph, solves)


def certify(solution: SPSolution, scenarios: ScenarioSet, problem: SPProblem,
            cfg: GuaranteeConfig) -> GuaranteeResult:
    """Support search on the program that produced ``solution``."""
    return find_support_subsample(lambda sc: solve_scenarios(problem, sc, check=False),
                                  scenarios, solution, cfg, problem.cfg.epigraph)


def frozen_ts_trajectories(solution: SPSolution, L_h: np.ndarray, ts0: float,
                           params: HubParameters, dt: float = 1.0) -> np.ndarray:
    """TS levels (n, T) when heat production is frozen at the plan.

    The heat balance fixes the net TS flow; complementarity makes charge
    and discharge unique.
    """
    sp = solution.setpoints
    prod = sp.q_gb + sp.q_chp + sp.q_hp
    L_h = np.atleast_2d(L_h)
    net = prod[None, :] - L_h  # > 0 charges
    charge, discharge = np.maximum(net, 0.0), np.maximum(-net, 0.0)
    out = np.empty_like(L_h)
    level = np.full(L_h.shape[0], float(ts0))
    for k in range(L_h.shape[1]):
        level = (params.gamma_ts * level + params.eta_ts * charge[:, k] * dt
                 - discharge[:, k] * dt / params.eta_ts)
        out[:, k] = level
    return out


def empirical_violation(solution: SPSolution, fresh: ScenarioSet, ts0: float,
                        params: HubParameters, dt: float = 1.0, tol: float = 1e-6) -> float:
    """Share of fresh scenarios whose TS path leaves the slack-widened bounds."""
    lv = frozen_ts_trajectories(solution, fresh.L_h, ts0, params, dt)
    lo = params.ts_min - solution.sigma_minus - tol
    hi = params.ts_max + solution.sigma_plus + tol
    bad = ((lv < lo[None, :]) | (lv > hi[None, :])).any(axis=1)
    return float(bad.mean()) if len(bad) else 0.0


def result_from_dict(d: dict) -> GuaranteeResult:
    return GuaranteeResult(d["s_star"], d["M"], d["beta"], d["epsilon"], d["bound"],
                           list(d["removed_indices"]), d["epigraph_active"])


__all__ = ["GuaranteeConfig", "GuaranteeResult", "epsilon_closed_form", "epsilon_bound",
           "greedy_support", "find_support_subsample", "certify", "empirical_violation",
           "frozen_ts_trajectories", "same_solution", "log_binom"]
