"""Bounded-variable revised primal simplex.

Rows are turned into equalities with one logical per row
(``a'x + s = b``; ``s >= 0`` for <=, ``s <= 0`` for >=, ``s = 0`` for =),
phase 1 minimizes artificial infeasibility, phase 2 the true cost. The
basis inverse is kept as a dense LU factor plus a product-form eta file,
refactorized every ``REFACTOR_EVERY`` pivots.

Pricing is Dantzig (largest reduced cost, lowest index on ties). After
``STALL_LIMIT`` consecutive degenerate pivots the solver switches to
Bland's rule until it makes progress again.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .lp import LinearProgram, NumericalError, SolveResult

REFACTOR_EVERY = 40
STALL_LIMIT = 30
PIVOT_TOL = 1e-9
DUAL_TOL = 1e-9
PRIMAL_TOL = 1e-9

BASIC, AT_LO, AT_HI, FREE = 0, 1, 2, 3


class _Basis:
    def __init__(self, A: np.ndarray, basis: np.ndarray):
        self.A = A
        self.basis = basis
        self.refactor()

    def refactor(self):
        self.etas: list[tuple[int, np.ndarray]] = []
        if not len(self.basis):
            self.lu = None
            return
        B = self.A[:, self.basis]
        self.lu = lu_factor(B, check_finite=False)
        if not np.isfinite(self.lu[0]).all() or np.abs(np.diag(self.lu[0])).min() < 1e-13:
            raise NumericalError("singular basis")

    def ftran(self, v: np.ndarray) -> np.ndarray:
        if self.lu is None:
            return v
        v = lu_solve(self.lu, v, check_finite=False)
        for r, w in self.etas:
            vr = v[r] / w[r]
            v -= w * vr
            v[r] = vr
        return v

    def btran(self, u: np.ndarray) -> np.ndarray:
        if self.lu is None:
            return u.copy()
        u = u.copy()
        for r, w in reversed(self.etas):
            ur = u[r]
            u[r] = (ur - (u @ w - ur * w[r])) / w[r]
        return lu_solve(self.lu, u, trans=1, check_finite=False)

    def replace(self, r: int, q: int, w: np.ndarray):
        self.basis[r] = q
        self.etas.append((r, w.copy()))
        if len(self.etas) >= REFACTOR_EVERY:
            self.refactor()


def _run(A, b, c, lo, hi, x, stat, basis, max_iter, it0):
    """Primal simplex from a feasible basis. Returns (status, iterations)."""
    m = A.shape[0]
    movable = hi - lo > 0
    fac = _Basis(A, basis)
    xN = np.where(stat == BASIC, 0.0, x)
    x[basis] = fac.ftran(b - A @ xN)
    it = it0
    degenerate = 0
    bland = False
    while True:
        if it >= max_iter:
            return "iteration_limit", it
        y = fac.btran(c[basis])
        d = c - A.T @ y
        d[basis] = 0.0
        elig = (((stat == AT_LO) & (d < -DUAL_TOL)) | ((stat == AT_HI) & (d > DUAL_TOL))
                | ((stat == FREE) & (np.abs(d) > DUAL_TOL))) & movable
        cand = np.flatnonzero(elig)
        if not len(cand):
            return "optimal", it
        q = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
        direction = 1.0 if d[q] < 0 else -1.0
        w = fac.ftran(A[:, q].copy())
        alpha = direction * w
        xb = x[basis]
        lob, hib = lo[basis], hi[basis]
        ratios = np.full(m, np.inf)
        dec = alpha > PIVOT_TOL
        inc = alpha < -PIVOT_TOL
        with np.errstate(invalid="ignore"):
            ratios[dec] = (xb[dec] - lob[dec]) / alpha[dec]
            ratios[inc] = (hib[inc] - xb[inc]) / (-alpha[inc])
        ratios = np.maximum(ratios, 0.0)
        ratios[np.isnan(ratios)] = np.inf
        t_flip = hi[q] - lo[q]
        t_min = ratios.min() if m else np.inf
        if not np.isfinite(t_min) and not np.isfinite(t_flip):
            return "unbounded", it
        it += 1
        if t_flip <= t_min:
            theta = t_flip
            x[basis] = xb - theta * alpha
            if stat[q] == AT_LO:
                x[q], stat[q] = hi[q], AT_HI
            else:
                x[q], stat[q] = lo[q], AT_LO
        else:
            theta = t_min
            ties = np.flatnonzero(ratios <= t_min + 1e-12)
            if bland or len(ties) == 1:
                r = int(ties[np.argmin(basis[ties])])
            else:
                mags = np.abs(alpha[ties])
                best = ties[mags >= mags.max() * (1 - 1e-12)]
                r = int(best[np.argmin(basis[best])])
            x[basis] = xb - theta * alpha
            x[q] = x[q] + direction * theta
            leaving = basis[r]
            if alpha[r] > 0:
                x[leaving], stat[leaving] = lo[leaving], AT_LO
            else:
                x[leaving], stat[leaving] = hi[leaving], AT_HI
            if not np.isfinite(x[leaving]):
                raise NumericalError("leaving variable has no finite bound")
            stat[q] = BASIC
            fac.replace(r, q, w)
            if not fac.etas:
                xN = np.where(stat == BASIC, 0.0, x)
                x[basis] = fac.ftran(b - A @ xN)
        if theta <= 1e-12:
            degenerate += 1
            if degenerate > STALL_LIMIT:
                bland = True
        else:
            degenerate = 0
            bland = False


def solve_simplex(lp: LinearProgram, max_iter: int = 200_000) -> SolveResult:
    m, n = lp.n_rows, lp.n_vars
    A0 = lp.matrix.toarray()
    # structural | logical | artificial
    lo_s = np.where(lp.senses == "G", -np.inf, 0.0)
    hi_s = np.where(lp.senses == "L", np.inf, 0.0)
    lo = np.concatenate([lp.lb, lo_s, np.zeros(m)])
    hi = np.concatenate([lp.ub, hi_s, np.full(m, np.inf)])
    N = n + 2 * m
    x = np.zeros(N)
    stat = np.full(N, FREE, dtype=np.int8)
    finite_lo = np.isfinite(lo)
    finite_hi = np.isfinite(hi)
    x[finite_lo] = lo[finite_lo]
    stat[finite_lo] = AT_LO
    only_hi = ~finite_lo & finite_hi
    x[only_hi] = hi[only_hi]
    stat[only_hi] = AT_HI

    resid = lp.rhs - A0 @ x[:n]
    art_sign = np.where(resid >= 0, 1.0, -1.0)
    A = np.hstack([A0, np.eye(m), np.diag(art_sign)]) if m else np.zeros((0, N))
    basis = np.empty(m, dtype=np.int64)
    for i in range(m):
        s = n + i
        if lo[s] - PRIMAL_TOL <= resid[i] <= hi[s] + PRIMAL_TOL:
            basis[i] = s
            x[s] = resid[i]
        else:
            basis[i] = n + m + i
            x[n + m + i] = abs(resid[i])
            x[s] = 0.0
            stat[s] = AT_LO if np.isfinite(lo[s]) else AT_HI
    stat[basis] = BASIC
    nonbasic_art = np.setdiff1d(np.arange(n + m, N), basis)
    x[nonbasic_art] = 0.0
    stat[nonbasic_art] = AT_LO

    b = lp.rhs.copy()
    iters = 0
    if m and (basis >= n + m).any():
        c1 = np.zeros(N)
        c1[n + m:] = 1.0
        status, iters = _run(A, b, c1, lo, hi, x, stat, basis, max_iter, 0)
        if status == "iteration_limit":
            return SolveResult("iteration_limit", iterations=iters)
        infeas = x[n + m:].sum()
        if infeas > 1e-8 * max(1.0, np.abs(b).max()):
            return SolveResult("infeasible", iterations=iters)
    # artificials may no longer move
    hi[n + m:] = 0.0
    x[n + m:] = np.clip(x[n + m:], 0.0, 0.0)
    c2 = np.concatenate([lp.cost, np.zeros(2 * m)])
    status, iters = _run(A, b, c2, lo, hi, x, stat, basis, max_iter, iters)
    if status != "optimal":
        return SolveResult(status, iterations=iters)

    fac = _Basis(A, basis)
    xN = np.where(stat == BASIC, 0.0, x)
    x[basis] = fac.ftran(b - A @ xN)
    y = fac.btran(c2[basis])
    xs = x[:n]
    resid = A[:, :n + m] @ x[:n + m] - b
    scale = max(1.0, np.abs(b).max() if m else 1.0)
    if m and np.abs(resid).max() > 1e-6 * scale:
        raise NumericalError(f"primal residual {np.abs(resid).max():.3e} after refactorization")
    xs = np.clip(xs, lp.lb, lp.ub)
    return SolveResult("optimal", x=xs, objective=float(lp.cost @ xs), duals=y, iterations=iters)
