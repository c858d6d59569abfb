"""Equality-form linear programs and a bundled revised simplex.

One canonical form: min or max ``cost . x`` over ``{x >= 0 : A x = rhs}``
with A held as sparse (row, col, value) triples.  Callers encode everything
into this form.  ``solve`` is a floating-point two-phase revised simplex
returning primal and dual optima; ``solve_exact`` repeats the computation in
rational arithmetic on small instances and serves as the independent oracle.

The constraint matrices built downstream carry dependent rows (marginal mass
rows and martingale rows share mean information), so both solvers keep
Phase I artificials that finish basic at zero in the basis, never let them
re-enter, and pivot them out at zero step length the moment an entering
column touches their row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .errors import Infeasible, IterationLimit, LpError, ScaleExceeded, Unbounded

FEAS_TOL = 1e-9
GAP_TOL = 1e-7
RATIO_TOL = 1e-10
STALL_LIMIT = 500
REFACTOR_EVERY = 100
MAX_ITER = 10 ** 6
EXACT_MAX_VARS = 200


@dataclass(frozen=True)
class LinearProgram:
    """min/max cost.x subject to A x = rhs, x >= 0."""

    sense: str
    cost: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    rhs: np.ndarray

    def __post_init__(self) -> None:
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        cost = np.asarray(self.cost, dtype=float).ravel()
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        vals = np.asarray(self.vals, dtype=float).ravel()
        rhs = np.asarray(self.rhs, dtype=float).ravel()
        if cost.size < 1 or rhs.size < 1:
            raise ValueError("need at least one variable and one constraint")
        if not (rows.size == cols.size == vals.size):
            raise ValueError("triple arrays must have equal length")
        if not (np.all(np.isfinite(cost)) and np.all(np.isfinite(vals)) and np.all(np.isfinite(rhs))):
            raise ValueError("cost, coefficients and rhs must be finite")
        if rows.size:
            if rows.min() < 0 or rows.max() >= rhs.size:
                raise ValueError("row index out of range")
            if cols.min() < 0 or cols.max() >= cost.size:
                raise ValueError("col index out of range")
            keys = rows * cost.size + cols
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate (row, col) triples")
        for name, arr in (("cost", cost), ("rows", rows), ("cols", cols), ("vals", vals), ("rhs", rhs)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_cols(self) -> int:
        return self.cost.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size

    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.n_rows, self.n_cols))

    def to_json(self) -> dict:
        return {
            "sense": self.sense,
            "cost": [float(x) for x in self.cost],
            "triples": [[int(r), int(c), float(v)] for r, c, v in zip(self.rows, self.cols, self.vals)],
            "rhs": [float(x) for x in self.rhs],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinearProgram":
        triples = obj.get("triples", [])
        rows = [t[0] for t in triples]
        cols = [t[1] for t in triples]
        vals = [t[2] for t in triples]
        return cls(sense=obj["sense"], cost=obj["cost"], rows=rows, cols=cols, vals=vals, rhs=obj["rhs"])

    def dump(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path: str) -> "LinearProgram":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class LpSolution:
    """Primal/dual optimum.  Exact fields are set only by solve_exact."""

    status: str
    primal: np.ndarray
    dual: np.ndarray
    objective: float
    iterations: int
    objective_exact: Fraction | None = None
    primal_exact: tuple[Fraction, ...] | None = None
    dual_exact: tuple[Fraction, ...] | None = None


def _refactor(a_ext: sp.csc_matrix, basis: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = b.size
    mat = np.zeros((m, m))
    indptr, indices, data = a_ext.indptr, a_ext.indices, a_ext.data
    for k, j in enumerate(basis):
        s0, s1 = indptr[j], indptr[j + 1]
        mat[indices[s0:s1], k] = data[s0:s1]
    try:
        binv = np.linalg.inv(mat)
    except np.linalg.LinAlgError as exc:
        raise LpError("basis matrix became singular") from exc
    return binv, np.clip(binv @ b, 0.0, None)


def _pivots(a_ext, at_csr, c, b, basis, binv, xb, allowed, art_mask, guard, enter_tol, start_iter, max_iter,
            force_bland=False):
    """Run simplex pivots for min c.x until optimality; mutates basis/binv/xb."""
    m = xb.size
    indptr, indices, data = a_ext.indptr, a_ext.indices, a_ext.data
    stall = 0
    prev_obj = np.inf
    it = start_iter
    while True:
        if it >= max_iter:
            raise IterationLimit(f"exceeded {max_iter} simplex pivots")
        y = c[basis] @ binv
        rc = c - at_csr @ y
        rc = np.where(allowed, rc, np.inf)
        if force_bland or stall >= STALL_LIMIT:
            negs = np.flatnonzero(rc < -enter_tol)
            if negs.size == 0:
                return it
            q = int(negs[0])
        else:
            q = int(np.argmin(rc))
            if rc[q] >= -enter_tol:
                return it
        s0, s1 = indptr[q], indptr[q + 1]
        d = binv[:, indices[s0:s1]] @ data[s0:s1]
        ratios = np.full(m, np.inf)
        pos = d > RATIO_TOL
        np.divide(xb, d, out=ratios, where=pos)
        if guard:
            force = art_mask[basis] & (np.abs(d) > RATIO_TOL)
            ratios[force] = 0.0
        r_min = ratios.min()
        if not np.isfinite(r_min):
            raise Unbounded("no blocking ratio for entering column")
        tied = np.flatnonzero(ratios <= r_min + 1e-12 * (1.0 + r_min))
        if guard:
            art_tied = tied[art_mask[basis[tied]]]
            if art_tied.size:
                tied = art_tied
        r = int(tied[np.argmin(basis[tied])])
        t = max(float(r_min), 0.0)
        xb -= t * d
        xb[r] = t
        basis[r] = q
        row = binv[r] / d[r]
        binv -= np.outer(d, row)
        binv[r] = row
        np.clip(xb, 0.0, None, out=xb)
        it += 1
        if (it - start_iter) % REFACTOR_EVERY == 0:
            fresh_binv, fresh_xb = _refactor(a_ext, basis, b)
            binv[:] = fresh_binv
            xb[:] = fresh_xb
        obj = float(c[basis] @ xb)
        if obj <= prev_obj - 1e-12 * (1.0 + abs(prev_obj)):
            stall = 0
        else:
            stall += 1
        prev_obj = obj


def solve(lp: LinearProgram, *, feas_tol: float = FEAS_TOL, gap_tol: float = GAP_TOL,
          max_iter: int = MAX_ITER, bland: bool = False) -> LpSolution:
    """Two-phase revised simplex.  Dantzig pricing, Bland fallback after 500
    stalled pivots (or throughout with bland=True), dense basis inverse
    refreshed every 100 pivots."""
    m, n = lp.n_rows, lp.n_cols
    c_real = np.array(lp.cost, dtype=float)
    flip = lp.sense == "max"
    if flip:
        c_real = -c_real
    row_sign = np.ones(m)
    row_sign[lp.rhs < 0] = -1.0
    b = lp.rhs * row_sign
    vals = lp.vals * row_sign[lp.rows]
    a = sp.csc_matrix((vals, (lp.rows, lp.cols)), shape=(m, n))
    a_ext = sp.hstack([a, sp.identity(m, format="csc")], format="csc")
    at_csr = a_ext.T.tocsr()
    art_mask = np.zeros(n + m, dtype=bool)
    art_mask[n:] = True
    allowed = ~art_mask
    basis = np.arange(n, n + m, dtype=np.int64)
    binv = np.eye(m)
    xb = b.copy()

    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    iters = _pivots(a_ext, at_csr, c1, b, basis, binv, xb, allowed, art_mask,
                    guard=False, enter_tol=1e-10, start_iter=0, max_iter=max_iter,
                    force_bland=bland)
    binv, xb = _refactor(a_ext, basis, b)
    phase1 = float(c1[basis] @ xb)
    if phase1 > feas_tol * (1.0 + float(np.abs(b).max())):
        raise Infeasible(f"phase 1 optimum {phase1:.3e} exceeds tolerance")

    c2 = np.concatenate([c_real, np.zeros(m)])
    enter_tol = 1e-10 * (1.0 + float(np.abs(c_real).max()))
    iters = _pivots(a_ext, at_csr, c2, b, basis, binv, xb, allowed, art_mask,
                    guard=True, enter_tol=enter_tol, start_iter=iters, max_iter=max_iter,
                    force_bland=bland)
    binv, xb = _refactor(a_ext, basis, b)

    x = np.zeros(n + m)
    x[basis] = xb
    primal = x[:n]
    dual = (c2[basis] @ binv) * row_sign
    objective = float(c_real @ primal)
    if flip:
        objective = -objective
        dual = -dual
    residual = float(np.abs(lp.matrix() @ primal - lp.rhs).max())
    if residual > 10 * feas_tol * (1.0 + float(np.abs(lp.rhs).max())):
        raise LpError(f"optimal basis violates constraints by {residual:.3e}")
    return LpSolution("optimal", primal, dual, objective, iters)


def _exact_pivot(tab, xb, basis, r, q):
    piv = tab[r][q]
    inv = Fraction(1) / piv
    tab[r] = [v * inv for v in tab[r]]
    xb[r] = xb[r] * inv
    row_r = tab[r]
    for i, row in enumerate(tab):
        if i == r:
            continue
        f = row[q]
        if f:
            tab[i] = [a - f * b_ for a, b_ in zip(row, row_r)]
            xb[i] = xb[i] - f * xb[r]
    basis[r] = q


def _exact_phase(tab, xb, basis, c, n_struct, guard, it, max_iter):
    """Bland's rule throughout; exact comparisons, no tolerances."""
    m = len(tab)
    while True:
        if it >= max_iter:
            raise IterationLimit(f"exceeded {max_iter} exact pivots")
        cb = [c[basis[i]] for i in range(m)]
        entering = -1
        for j in range(n_struct):
            if j in basis:
                continue
            rc = c[j] - sum(cb[i] * tab[i][j] for i in range(m))
            if rc < 0:
                entering = j
                break
        if entering < 0:
            return it
        q = entering
        best_ratio = None
        best_rows: list[int] = []
        for i in range(m):
            d = tab[i][q]
            if guard and basis[i] >= n_struct and d != 0:
                ratio = Fraction(0)
            elif d > 0:
                ratio = xb[i] / d
            else:
                continue
            if best_ratio is None or ratio < best_ratio:
                best_ratio = ratio
                best_rows = [i]
            elif ratio == best_ratio:
                best_rows.append(i)
        if best_ratio is None:
            raise Unbounded("no blocking ratio for entering column")
        if guard:
            art_rows = [i for i in best_rows if basis[i] >= n_struct]
            if art_rows:
                best_rows = art_rows
        r = min(best_rows, key=lambda i: basis[i])
        _exact_pivot(tab, xb, basis, r, q)
        it += 1


def _as_rational(x: float) -> Fraction:
    """Simplest rational within one part in 10^12 of the float.

    Problem data is usually meant exactly (weights like 1/3, integer payoff
    differences); float64 storage perturbs non-dyadic values by ~1e-16, which
    is enough to make exactly dependent rows inconsistent.  Snapping to the
    nearest small-denominator rational restores the intended instance."""
    return Fraction(x).limit_denominator(10**12)


def solve_exact(lp: LinearProgram, *, max_iter: int = MAX_ITER) -> LpSolution:
    """Two-phase tableau simplex in Fraction arithmetic (Bland's rule).

    Oracle-scale only: refuses instances with more than 200 variables.
    Coefficients are read through :func:`_as_rational`.
    """
    m, n = lp.n_rows, lp.n_cols
    if n > EXACT_MAX_VARS:
        raise ScaleExceeded(f"{n} variables exceeds the exact-solver limit of {EXACT_MAX_VARS}")
    flip = lp.sense == "max"
    c_struct = [_as_rational(x) if not flip else -_as_rational(x) for x in lp.cost.tolist()]
    b = [_as_rational(x) for x in lp.rhs.tolist()]
    dense = [[Fraction(0)] * n for _ in range(m)]
    for r, cc, v in zip(lp.rows.tolist(), lp.cols.tolist(), lp.vals.tolist()):
        dense[r][cc] = _as_rational(v)
    row_sign = [1] * m
    for i in range(m):
        if b[i] < 0:
            row_sign[i] = -1
            b[i] = -b[i]
            dense[i] = [-v for v in dense[i]]
    tab = [dense[i] + [Fraction(1) if k == i else Fraction(0) for k in range(m)] for i in range(m)]
    xb = list(b)
    basis = [n + i for i in range(m)]

    c1 = [Fraction(0)] * n + [Fraction(1)] * m
    iters = _exact_phase(tab, xb, basis, c1, n, guard=False, it=0, max_iter=max_iter)
    if sum(c1[basis[i]] * xb[i] for i in range(m)) != 0:
        raise Infeasible("phase 1 optimum is positive")

    c2 = c_struct + [Fraction(0)] * m
    iters = _exact_phase(tab, xb, basis, c2, n, guard=True, it=iters, max_iter=max_iter)

    x = [Fraction(0)] * (n + m)
    for i in range(m):
        x[basis[i]] = xb[i]
    cb = [c2[basis[i]] for i in range(m)]
    dual = []
    for i in range(m):
        y_i = sum(cb[k] * tab[k][n + i] for k in range(m)) * row_sign[i]
        dual.append(-y_i if flip else y_i)
    obj = sum(c2[j] * x[j] for j in range(n))
    if flip:
        obj = -obj
    primal = x[:n]
    return LpSolution(
        status="optimal",
        primal=np.array([float(v) for v in primal]),
        dual=np.array([float(v) for v in dual]),
        objective=float(obj),
        iterations=iters,
        objective_exact=obj,
        primal_exact=tuple(primal),
        dual_exact=tuple(dual),
    )
