"""Solver-independent optimality certificate for LP and pair-fixed LP results.

Uses the Lagrangian L(x, y) = c'x - y'(Ax - b) with reduced costs
d = c - A'y. Dual feasibility: y <= 0 on <= rows, y >= 0 on >= rows, and
d of the right sign wherever a bound is infinite. The dual objective is
b'y + sum_j (d_j * lb_j if d_j > 0 else d_j * ub_j).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lp import COMP_TOL, FEAS_TOL, GAP_TOL, ComplementarityPair, LinearProgram, SolveResult


@dataclass
class Certificate:
    primal_residual: float
    bound_violation: float
    dual_infeasibility: float
    duality_gap: float
    complementarity: float
    ok: bool


def certify_solution(lp: LinearProgram, res: SolveResult,
                     pairs: Sequence[ComplementarityPair] = (),
                     feas_tol: float = FEAS_TOL, gap_tol: float = GAP_TOL,
                     comp_tol: float = COMP_TOL) -> Certificate:
    """Check feasibility, pair products and the duality gap of ``res``.

    For branch-and-bound results the LP is the leaf: ``res.fixed`` variables
    have their upper bound set to zero before the dual check.
    """
    if res.x is None or res.duals is None:
        raise ValueError("result carries no primal/dual vectors")
    leaf = lp.fix_zero(res.fixed)
    x, y = np.asarray(res.x), np.asarray(res.duals)
    A = leaf.matrix
    ax = A @ x
    scale = max(1.0, float(np.abs(leaf.rhs).max()) if leaf.n_rows else 1.0)
    r = ax - leaf.rhs
    viol = np.where(leaf.senses == "L", np.maximum(r, 0.0),
                    np.where(leaf.senses == "G", np.maximum(-r, 0.0), np.abs(r)))
    primal_res = float(viol.max()) / scale if len(viol) else 0.0
    bnd = np.maximum(leaf.lb - x, 0.0).max(initial=0.0)
    bnd = max(bnd, np.maximum(x - leaf.ub, 0.0).max(initial=0.0))

    d = leaf.cost - A.T @ y
    dual_inf = 0.0
    if leaf.n_rows:
        dual_inf = max(dual_inf, float(np.maximum(y[leaf.senses == "L"], 0.0).max(initial=0.0)))
        dual_inf = max(dual_inf, float(np.maximum(-y[leaf.senses == "G"], 0.0).max(initial=0.0)))
    no_lb = ~np.isfinite(leaf.lb)
    no_ub = ~np.isfinite(leaf.ub)
    dual_inf = max(dual_inf, float(np.maximum(d[no_lb], 0.0).max(initial=0.0)))
    dual_inf = max(dual_inf, float(np.maximum(-d[no_ub], 0.0).max(initial=0.0)))
    cscale = max(1.0, float(np.abs(leaf.cost).max(initial=0.0)))
    dual_inf /= cscale

    lbf = np.where(np.isfinite(leaf.lb), leaf.lb, 0.0)
    ubf = np.where(np.isfinite(leaf.ub), leaf.ub, 0.0)
    dual_obj = float(leaf.rhs @ y + np.where(d > 0, d * lbf, d * ubf).sum())
    primal_obj = float(leaf.cost @ x)
    gap = abs(primal_obj - dual_obj) / max(1.0, abs(primal_obj))

    comp = 0.0
    if pairs:
        a = np.array([p.x for p in pairs])
        b = np.array([p.y for p in pairs])
        comp = float(np.abs(x[a] * x[b]).max())
    ok = (primal_res < feas_tol and bnd < feas_tol * scale and dual_inf < feas_tol * 10
          and gap < gap_tol and comp < comp_tol)
    return Certificate(primal_res, float(bnd), dual_inf, gap, comp, bool(ok))
