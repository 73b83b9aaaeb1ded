"""Branch-and-bound over disjunctive complementarity pairs.

Each pair (x, y) with x, y >= 0 and x*y = 0 is the disjunction
``x = 0 or y = 0``; a branch pins one side to zero through its upper
bound, so every node is an ordinary LP. No big-M constants are involved.
"""

from __future__ import annotations

import heapq
from typing import Sequence

import numpy as np

from .lp import COMP_TOL, ComplementarityPair, LinearProgram, SolveResult, solve_lp

MODES = ("relax_first", "always_branch")


def pair_products(x: np.ndarray, pairs: Sequence[ComplementarityPair]) -> np.ndarray:
    if not pairs:
        return np.zeros(0)
    a = np.array([p.x for p in pairs])
    b = np.array([p.y for p in pairs])
    return np.abs(x[a] * x[b])


def _check_pairs(lp: LinearProgram, pairs):
    for p in pairs:
        for j in (p.x, p.y):
            if not 0 <= j < lp.n_vars:
                raise ValueError(f"pair index {j} out of range")
            if lp.lb[j] != 0.0:
                raise ValueError(f"complementarity variable {j} must have lower bound 0")


def solve_with_complementarity(lp: LinearProgram, pairs: Sequence[ComplementarityPair],
                               mode: str = "relax_first", backend: str = "highs",
                               comp_tol: float = COMP_TOL, node_limit: int = 20_000,
                               ) -> SolveResult:
    """Minimize the LP subject to every pair's product vanishing.

    Best-bound search; ties go to the deepest node, then the lowest node
    id, so equal-cost plateaus are dived rather than swept. Children pin the pair's
    first variable before its second. ``relax_first`` branches only on pairs
    the current node's LP violates; ``always_branch`` pins every pair in
    order, regardless of the relaxation.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    pairs = list(pairs)
    _check_pairs(lp, pairs)

    best: SolveResult | None = None
    best_obj = np.inf
    heap: list[tuple[float, int, int, tuple[int, ...]]] = [(-np.inf, 0, 0, ())]
    next_id = 1
    nodes = 0
    max_depth = 0
    iters = 0
    branched: set[int] = set()
    root_status = None

    while heap:
        bound, neg_depth, nid, fixed = heapq.heappop(heap)
        depth = -neg_depth
        if bound >= best_obj - 1e-9 * max(1.0, abs(best_obj)):
            continue
        if nid:
            nodes += 1
            if nodes > node_limit:
                return _finish(best, "iteration_limit", nodes, max_depth, branched, iters)
        res = solve_lp(lp.fix_zero(fixed), backend=backend)
        iters += res.iterations
        if nid == 0:
            root_status = res.status
            if res.status == "unbounded":
                return SolveResult("unbounded", iterations=iters)
        if res.status == "iteration_limit":
            return _finish(best, "iteration_limit", nodes, max_depth, branched, iters)
        if res.status != "optimal":
            continue
        if res.objective >= best_obj - 1e-9 * max(1.0, abs(best_obj)):
            continue
        fixed_set = set(fixed)
        prods = pair_products(res.x, pairs)
        if mode == "relax_first":
            viol = np.flatnonzero(prods > comp_tol)
            k = int(viol[np.argmax(prods[viol])]) if len(viol) else -1
        else:
            open_ = [i for i, p in enumerate(pairs)
                     if p.x not in fixed_set and p.y not in fixed_set]
            k = open_[0] if open_ else -1
        if k < 0:
            best = res
            best.fixed = tuple(sorted(fixed))
            best_obj = res.objective
            continue
        branched.add(k)
        p = pairs[k]
        for j in (p.x, p.y):
            heapq.heappush(heap, (res.objective, -(depth + 1), next_id,
                                  tuple(sorted(fixed_set | {j}))))
            next_id += 1
            max_depth = max(max_depth, depth + 1)

    if best is None:
        status = "infeasible" if root_status != "iteration_limit" else "iteration_limit"
        return SolveResult(status, iterations=iters, nodes=nodes, max_depth=max_depth,
                           pairs_branched=len(branched))
    return _finish(best, "optimal", nodes, max_depth, branched, iters)


def _finish(best, status, nodes, max_depth, branched, iters) -> SolveResult:
    if best is None:
        return SolveResult(status, iterations=iters, nodes=nodes, max_depth=max_depth,
                           pairs_branched=len(branched))
    best.status = status
    best.nodes = nodes
    best.max_depth = max_depth
    best.pairs_branched = len(branched)
    best.iterations = iters
    return best
