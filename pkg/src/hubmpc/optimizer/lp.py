"""Linear programs in a row-sense canonical form, plus the solve entry point."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sps

FEAS_TOL = 1e-7
COMP_TOL = 1e-6
GAP_TOL = 1e-6

SENSES = ("L", "E", "G")


class NumericalError(RuntimeError):
    """The LP engine broke down even after refactorization."""


@dataclass(frozen=True)
class ComplementarityPair:
    """Two nonnegative variables whose product must vanish."""

    x: int
    y: int

    def __post_init__(self):
        if self.x == self.y:
            raise ValueError("complementarity pair needs distinct variables")


@dataclass
class LinearProgram:
    """min c'x  s.t.  A x (<=|=|>=) b,  lb <= x <= ub.

    ``A`` is given as COO triplets; :attr:`matrix` materializes CSR.
    """

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    senses: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    cost: np.ndarray
    var_names: list[str] | None = None
    _csr: sps.csr_matrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.vals = np.asarray(self.vals, dtype=float)
        self.senses = np.asarray(self.senses, dtype="<U1")
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        self.cost = np.asarray(self.cost, dtype=float)
        n, m = len(self.cost), len(self.rhs)
        if not (len(self.lb) == len(self.ub) == n):
            raise ValueError("bound vectors do not match the cost vector")
        if len(self.senses) != m:
            raise ValueError("one sense per row required")
        if not set(self.senses.tolist()) <= set(SENSES):
            raise ValueError(f"row senses must be in {SENSES}")
        if not (len(self.rows) == len(self.cols) == len(self.vals)):
            raise ValueError("triplet arrays differ in length")
        if len(self.rows) and (self.rows.min() < 0 or self.rows.max() >= m
                               or self.cols.min() < 0 or self.cols.max() >= n):
            raise ValueError("triplet index out of range")
        if not (np.isfinite(self.vals).all() and np.isfinite(self.rhs).all()
                and np.isfinite(self.cost).all()):
            raise ValueError("coefficients must be finite")
        if (self.lb > self.ub).any():
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n_vars(self) -> int:
        return len(self.cost)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    @property
    def matrix(self) -> sps.csr_matrix:
        if self._csr is None:
            self._csr = sps.csr_matrix(
                (self.vals, (self.rows, self.cols)), shape=(self.n_rows, self.n_vars))
        return self._csr

    def with_bounds(self, lb=None, ub=None) -> "LinearProgram":
        out = LinearProgram(self.rows, self.cols, self.vals, self.senses, self.rhs,
                            self.lb if lb is None else lb, self.ub if ub is None else ub,
                            self.cost, self.var_names)
        out._csr = self._csr
        return out

    def fix_zero(self, idx: Sequence[int]) -> "LinearProgram":
        """Copy with the listed variables pinned to 0."""
        if not len(idx):
            return self
        lb, ub = self.lb.copy(), self.ub.copy()
        idx = np.asarray(list(idx), dtype=np.int64)
        if (lb[idx] > 0).any():
            raise ValueError("cannot pin a variable with positive lower bound to 0")
        ub[idx] = 0.0
        lb[idx] = np.maximum(lb[idx], 0.0)
        return self.with_bounds(lb, ub)


class LPBuilder:
    """Incremental assembly of a :class:`LinearProgram`."""

    def __init__(self):
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._c: list[float] = []
        self._names: list[str] = []
        self._r: list[int] = []
        self._k: list[int] = []
        self._v: list[float] = []
        self._sense: list[str] = []
        self._rhs: list[float] = []

    @property
    def n_vars(self) -> int:
        return len(self._c)

    @property
    def n_rows(self) -> int:
        return len(self._rhs)

    def add_var(self, name: str = "", lb: float = 0.0, ub: float = np.inf,
                cost: float = 0.0) -> int:
        self._lb.append(lb)
        self._ub.append(ub)
        self._c.append(cost)
        self._names.append(name)
        return len(self._c) - 1

    def add_vars(self, n: int, prefix: str, lb=0.0, ub=np.inf, cost=0.0) -> np.ndarray:
        lb = np.broadcast_to(np.asarray(lb, dtype=float), (n,))
        ub = np.broadcast_to(np.asarray(ub, dtype=float), (n,))
        cost = np.broadcast_to(np.asarray(cost, dtype=float), (n,))
        return np.array([self.add_var(f"{prefix}[{i}]", lb[i], ub[i], cost[i])
                         for i in range(n)], dtype=np.int64)

    def add_cost(self, j: int, c: float) -> None:
        self._c[j] += c

    def add_row(self, terms: dict[int, float] | Sequence[tuple[int, float]], sense: str,
                rhs: float) -> int:
        if sense not in SENSES:
            raise ValueError(f"bad sense {sense!r}")
        i = len(self._rhs)
        items = terms.items() if isinstance(terms, dict) else terms
        for j, v in items:
            if v != 0.0:
                self._r.append(i)
                self._k.append(int(j))
                self._v.append(float(v))
        self._sense.append(sense)
        self._rhs.append(float(rhs))
        return i

    def build(self) -> LinearProgram:
        return LinearProgram(self._r, self._k, self._v, self._sense, self._rhs,
                             self._lb, self._ub, self._c, list(self._names))


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    x: np.ndarray | None = None
    objective: float = float("nan")
    duals: np.ndarray | None = None
    iterations: int = 0
    nodes: int = 0
    max_depth: int = 0
    pairs_branched: int = 0
    fixed: tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def to_bytes(self) -> bytes:
        parts = [self.status.encode(), np.float64(self.objective).tobytes(),
                 np.asarray(self.fixed, dtype=np.int64).tobytes(),
                 np.asarray([self.iterations, self.nodes, self.max_depth,
                             self.pairs_branched], dtype=np.int64).tobytes()]
        for a in (self.x, self.duals):
            parts.append(b"" if a is None else np.asarray(a, dtype=np.float64).tobytes())
        return b"|".join(parts)


def solve_lp(lp: LinearProgram, backend: str = "highs", max_iter: int = 200_000) -> SolveResult:
    """Solve an LP; ``backend`` is ``"highs"`` or ``"simplex"`` (in-house)."""
    if backend == "simplex":
        from .simplex import solve_simplex
        return solve_simplex(lp, max_iter=max_iter)
    if backend == "highs":
        return _solve_highs(lp, max_iter)
    raise ValueError(f"unknown LP backend {backend!r}")


def _solve_highs(lp: LinearProgram, max_iter: int) -> SolveResult:
    from scipy.optimize import linprog

    A = lp.matrix
    le = lp.senses == "L"
    ge = lp.senses == "G"
    eq = lp.senses == "E"
    ub_rows = np.flatnonzero(le | ge)
    sign = np.where(ge[ub_rows], -1.0, 1.0)
    A_ub = sps.diags(sign) @ A[ub_rows] if len(ub_rows) else None
    b_ub = sign * lp.rhs[ub_rows] if len(ub_rows) else None
    eq_rows = np.flatnonzero(eq)
    A_eq = A[eq_rows] if len(eq_rows) else None
    b_eq = lp.rhs[eq_rows] if len(eq_rows) else None
    bounds = np.column_stack([lp.lb, lp.ub])
    res = linprog(lp.cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs-ds", options={"maxiter": max_iter, "presolve": True})
    nit = int(getattr(res, "nit", 0) or 0)
    if res.status == 2:
        return SolveResult("infeasible", iterations=nit)
    if res.status == 3:
        return SolveResult("unbounded", iterations=nit)
    if res.status == 1:
        return SolveResult("iteration_limit", iterations=nit)
    if res.status != 0:
        raise NumericalError(f"HiGHS failed: {res.message}")
    y = np.zeros(lp.n_rows)
    if len(ub_rows):
        y[ub_rows] = sign * res.ineqlin.marginals
    if len(eq_rows):
        y[eq_rows] = res.eqlin.marginals
    x = np.clip(res.x, lp.lb, lp.ub)
    return SolveResult("optimal", x=x, objective=float(lp.cost @ x), duals=y, iterations=nit)


def write_lp_text(lp: LinearProgram, pairs: Sequence[ComplementarityPair], path) -> None:
    """Plain-text dump: variables, rows, coefficients and pairs."""
    with open(path, "w") as fh:
        fh.write("# hubmpc-lp 1\n")
        fh.write(f"VARS {lp.n_vars}\n")
        names = lp.var_names or [""] * lp.n_vars
        for j in range(lp.n_vars):
            lo, hi, c = float(lp.lb[j]), float(lp.ub[j]), float(lp.cost[j])
            fh.write(f"{j} {lo!r} {hi!r} {c!r} {names[j]}\n")
        fh.write(f"ROWS {lp.n_rows}\n")
        for i in range(lp.n_rows):
            fh.write(f"{i} {lp.senses[i]} {float(lp.rhs[i])!r}\n")
        fh.write(f"COEFS {len(lp.vals)}\n")
        for r, c, v in zip(lp.rows, lp.cols, lp.vals):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
        fh.write(f"PAIRS {len(pairs)}\n")
        for p in pairs:
            fh.write(f"{p.x} {p.y}\n")


def read_lp_text(path) -> tuple[LinearProgram, list[ComplementarityPair]]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    it = iter(lines)

    def header(tag):
        key, n = next(it).split()
        if key != tag:
            raise ValueError(f"expected {tag}, got {key}")
        return int(n)

    n = header("VARS")
    lb, ub, c, names = [], [], [], []
    for _ in range(n):
        parts = next(it).split(" ", 4)
        lb.append(float(parts[1]))
        ub.append(float(parts[2]))
        c.append(float(parts[3]))
        names.append(parts[4] if len(parts) > 4 else "")
    m = header("ROWS")
    senses, rhs = [], []
    for _ in range(m):
        _, s, b = next(it).split()
        senses.append(s)
        rhs.append(float(b))
    nnz = header("COEFS")
    trip = np.array([next(it).split() for _ in range(nnz)], dtype=object).reshape(nnz, 3)
    rows = trip[:, 0].astype(np.int64) if nnz else []
    cols = trip[:, 1].astype(np.int64) if nnz else []
    vals = trip[:, 2].astype(float) if nnz else []
    p = header("PAIRS")
    pairs = [ComplementarityPair(*map(int, next(it).split())) for _ in range(p)]
    return LinearProgram(rows, cols, vals, senses, rhs, lb, ub, c, names), pairs
