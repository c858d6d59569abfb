"""Model-independent price bounds via martingale optimal transport.

Given marginal laws mu_1..mu_n in convex order and a path payoff, the lower
(upper) bound is the minimum (maximum) of E_Q[payoff] over all couplings Q
matching the marginals and making the coordinate process a martingale.  On
discrete marginals this is a finite LP: one mass variable per product-grid
cell, a mass row per (date, atom), and a conditional-mean row per history
cell.  The LP dual is exactly a semi-static hedge: marginal-row duals are the
static payouts u_i, martingale-row duals are the delta positions.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import payoff as payoff_mod
from .errors import DegenerateDual, DimensionMismatch, Infeasible, MotboundError, NotAdmissible
from .hedge import (DeltaTable, PiecewiseLinear, SemiStaticHedge, VerificationReport,
                    _payoff_wing_slopes, price as hedge_price, slackness, verify)
from .lp import FEAS_TOL, LinearProgram, LpSolution, solve
from .measures import DiscreteMeasure, MarginalSystem, detect_barriers
from .payoff import Payoff

GAP_TOL = 1e-7
RESIDUAL_TOL = 1e-9
MASS_FLOOR = 1e-15


def fmt12(x: float) -> str:
    return f"{float(x):.12g}"


@dataclass(frozen=True)
class MotProblem:
    system: MarginalSystem
    payoff: Payoff
    sense: str

    def __post_init__(self) -> None:
        if self.sense not in ("lower", "upper"):
            raise ValueError(f"sense must be 'lower' or 'upper', got {self.sense!r}")
        if self.payoff.n != self.system.n_dates:
            raise DimensionMismatch(
                f"payoff covers {self.payoff.n} dates, system has {self.system.n_dates}")
        if not self.system.admissible:
            raise NotAdmissible("marginals are not in convex order; no martingale coupling exists")


@dataclass(frozen=True)
class Coupling:
    """Sparse coupling over the product grid: one (index tuple, mass) per cell."""

    grids: tuple[np.ndarray, ...]
    indices: np.ndarray
    masses: np.ndarray

    def __post_init__(self) -> None:
        grids = tuple(np.asarray(g, dtype=float).ravel() for g in self.grids)
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, len(grids))
        masses = np.asarray(self.masses, dtype=float).ravel()
        if masses.size != indices.shape[0]:
            raise ValueError("one mass per index row required")
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "masses", masses)

    @property
    def n(self) -> int:
        return len(self.grids)

    def total_mass(self) -> float:
        return float(self.masses.sum())

    def paths(self) -> np.ndarray:
        return np.column_stack([self.grids[i][self.indices[:, i]] for i in range(self.n)])

    def marginal(self, i: int) -> np.ndarray:
        return np.bincount(self.indices[:, i], weights=self.masses, minlength=self.grids[i].size)

    def expectation(self, payoff: Payoff) -> float:
        vals = payoff_mod.tabulate(payoff, self.grids)
        shape = tuple(g.size for g in self.grids)
        flat = np.ravel_multi_index(tuple(self.indices.T), shape)
        return float(np.dot(vals[flat], self.masses))

    def max_marginal_residual(self, system: MarginalSystem) -> float:
        worst = 0.0
        for i, mu in enumerate(system.marginals):
            if self.grids[i].size != mu.points.size or not np.allclose(self.grids[i], mu.points):
                raise DimensionMismatch(f"coupling grid {i} does not match the marginal atoms")
            worst = max(worst, float(np.abs(self.marginal(i) - mu.weights).max()))
        return worst

    def max_martingale_residual(self) -> float:
        worst = 0.0
        for j in range(self.n - 1):
            sizes = [self.grids[t].size for t in range(j + 1)]
            hist = np.ravel_multi_index(tuple(self.indices[:, : j + 1].T), sizes)
            move = self.masses * (self.grids[j + 1][self.indices[:, j + 1]]
                                  - self.grids[j][self.indices[:, j]])
            res = np.bincount(hist, weights=move, minlength=int(np.prod(sizes)))
            if res.size:
                worst = max(worst, float(np.abs(res).max()))
        return worst

    def to_csv(self) -> str:
        header = ",".join(f"s_{i + 1}" for i in range(self.n)) + ",mass"
        lines = [header]
        for path, mass in zip(self.paths(), self.masses):
            lines.append(",".join(fmt12(x) for x in path) + "," + fmt12(mass))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Diagnostics:
    duality_gap: float
    max_marginal_residual: float
    max_martingale_residual: float
    max_slackness_violation: float
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "duality_gap": float(self.duality_gap),
            "max_marginal_residual": float(self.max_marginal_residual),
            "max_martingale_residual": float(self.max_martingale_residual),
            "max_slackness_violation": float(self.max_slackness_violation),
        }
        out.update({k: v for k, v in self.extras.items()})
        return out


@dataclass(frozen=True)
class MotResult:
    value: float
    coupling: Coupling
    hedge: SemiStaticHedge
    diagnostics: Diagnostics
    report: VerificationReport


@dataclass(frozen=True)
class _Layout:
    grids: tuple[np.ndarray, ...]
    shape: tuple[int, ...]
    n_cells: int
    n_rows: int
    marginal_row: tuple[dict, ...]
    dropped: tuple[int, ...]
    mart_row: tuple[dict, ...]


def _pair_blocks(system: MarginalSystem) -> list[tuple[np.ndarray, np.ndarray]] | None:
    """Per consecutive pair, block ids for each side's atoms, or None to skip pruning."""
    out = []
    for t in range(system.n_dates - 1):
        mu_a, mu_b = system.marginals[t], system.marginals[t + 1]
        try:
            dec = detect_barriers(mu_a, mu_b)
        except MotboundError:
            return None
        blk_a = np.zeros(mu_a.points.size, dtype=np.int64)
        blk_b = np.zeros(mu_b.points.size, dtype=np.int64)
        for k, block in enumerate(dec.blocks):
            blk_a[np.searchsorted(mu_a.points, block.sub1.points)] = k
            blk_b[np.searchsorted(mu_b.points, block.sub2.points)] = k
        out.append((blk_a, blk_b))
    return out


def _layout(system: MarginalSystem) -> _Layout:
    grids = tuple(mu.points for mu in system.marginals)
    shape = tuple(g.size for g in grids)
    n = len(grids)
    n_cells = int(np.prod(shape))

    marginal_row: list[dict] = []
    dropped: list[int] = []
    row = 0
    for i, mu in enumerate(system.marginals):
        drop = -1 if i == 0 else int(np.argmax(mu.weights))
        dropped.append(drop)
        rmap = {}
        for k in range(shape[i]):
            if k == drop:
                continue
            rmap[k] = row
            row += 1
        marginal_row.append(rmap)

    # Histories whose prefixes cross a barrier of some consecutive pair carry
    # zero mass under every feasible coupling, so their conditional-mean rows
    # are implied and can go; the columns all stay.
    pair_blocks = _pair_blocks(system) if n >= 3 else None
    mart_row: list[dict] = []
    for j in range(n - 1):
        rmap = {}
        for hist in itertools.product(*[range(shape[t]) for t in range(j + 1)]):
            if pair_blocks is not None:
                blocked = any(pair_blocks[t][0][hist[t]] != pair_blocks[t][1][hist[t + 1]]
                              for t in range(j))
                if blocked:
                    continue
            rmap[hist] = row
            row += 1
        mart_row.append(rmap)

    return _Layout(grids=grids, shape=shape, n_cells=n_cells, n_rows=row,
                   marginal_row=tuple(marginal_row), dropped=tuple(dropped),
                   mart_row=tuple(mart_row))


def _lp_from_layout(layout: _Layout, system: MarginalSystem, cost: np.ndarray, sense: str) -> LinearProgram:
    n = len(layout.grids)
    shape = layout.shape
    idx = np.indices(shape).reshape(n, -1)
    flat = np.arange(layout.n_cells)

    rows_parts, cols_parts, vals_parts = [], [], []
    rhs = np.zeros(layout.n_rows)

    for i, mu in enumerate(system.marginals):
        rmap = np.full(shape[i], -1, dtype=np.int64)
        for k, r in layout.marginal_row[i].items():
            rmap[k] = r
            rhs[r] = mu.weights[k]
        r = rmap[idx[i]]
        keep = r >= 0
        rows_parts.append(r[keep])
        cols_parts.append(flat[keep])
        vals_parts.append(np.ones(int(keep.sum())))

    for j in range(n - 1):
        hist_sizes = shape[: j + 1]
        rmap = np.full(int(np.prod(hist_sizes)), -1, dtype=np.int64)
        for hist, r in layout.mart_row[j].items():
            rmap[np.ravel_multi_index(hist, hist_sizes)] = r
        hist_of_cell = np.ravel_multi_index(tuple(idx[: j + 1]), hist_sizes)
        r = rmap[hist_of_cell]
        coeff = layout.grids[j + 1][idx[j + 1]] - layout.grids[j][idx[j]]
        keep = (r >= 0) & (coeff != 0.0)
        rows_parts.append(r[keep])
        cols_parts.append(flat[keep])
        vals_parts.append(coeff[keep])

    return LinearProgram(
        sense="min" if sense == "lower" else "max",
        cost=cost,
        rows=np.concatenate(rows_parts),
        cols=np.concatenate(cols_parts),
        vals=np.concatenate(vals_parts),
        rhs=rhs,
    )


def _assemble(problem: MotProblem) -> tuple[LinearProgram, _Layout]:
    if not problem.system.admissible:
        raise NotAdmissible("marginals are not in convex order")
    layout = _layout(problem.system)
    cost = payoff_mod.tabulate(problem.payoff, layout.grids)
    return _lp_from_layout(layout, problem.system, cost, problem.sense), layout


def build_lp(problem: MotProblem) -> LinearProgram:
    """Assemble the transport LP: cell masses, marginal rows (one redundant
    row per date beyond the first dropped at the heaviest atom), and one
    conditional-mean row per reachable history cell."""
    return _assemble(problem)[0]


def verification_grids(problem: MotProblem) -> list[np.ndarray]:
    """Grids on which extracted hedges are checked: history axes stay on the
    marginal atoms (deltas exist only there); the final axis is the union of
    every date's atoms, refined once by midpoints, plus zero and the payoff's
    kinks.  Tabulated and custom payoffs get no refinement."""
    atoms = [mu.points for mu in problem.system.marginals]
    if problem.payoff.kind in ("tabulated", "custom"):
        return atoms
    last = np.union1d(atoms[0], atoms[0])
    for g in atoms[1:]:
        last = np.union1d(last, g)
    mids = 0.5 * (last[:-1] + last[1:])
    last = np.union1d(last, mids)
    kinks: list[float] = [0.0]
    for hist in itertools.product(*[g.tolist() for g in atoms[:-1]]):
        kinks.extend(payoff_mod.last_coord_kinks(problem.payoff, np.asarray(hist)))
    last = np.union1d(last, kinks)
    return [*atoms[:-1], last]


def _augment_last_static(hedge: SemiStaticHedge, payoff: Payoff, z_candidates: np.ndarray) -> SemiStaticHedge:
    """Extend u_n with extra knots so the assembled payout stays on the right
    side of the payoff at them: each new knot takes the tightest value over
    all histories, and the wings take the tightest admissible slopes.  Values
    at existing knots (in particular at the final marginal's atoms) are kept,
    so the hedge price is unchanged."""
    u_n = hedge.statics[-1]
    z_all = np.union1d(u_n.knots, np.asarray(z_candidates, dtype=float))
    fresh = ~np.isin(z_all, u_n.knots)
    take_min = hedge.sense == "sub"
    values = u_n(z_all)
    if fresh.any():
        fill = np.full(int(fresh.sum()), np.inf if take_min else -np.inf)
    else:
        fill = np.zeros(0)
    z_new = z_all[fresh]
    lo, hi = float(z_all[0]), float(z_all[-1])
    left_best = -np.inf if take_min else np.inf
    right_best = np.inf if take_min else -np.inf

    hist_grids = [u.knots.tolist() for u in hedge.statics[:-1]]
    for hist in itertools.product(*hist_grids):
        history = np.asarray(hist)
        h_last = history[-1]
        base = float(hedge.evaluate_last_axis(history, np.array([h_last]))[0]) - float(u_n(h_last))
        d = hedge.deltas[-1].lookup(history) if hedge.deltas else 0.0
        if z_new.size:
            slack = payoff_mod.evaluate_last_axis(payoff, history, z_new) - base - d * (z_new - h_last)
            fill = np.minimum(fill, slack) if take_min else np.maximum(fill, slack)
        phi_l, phi_r = _payoff_wing_slopes(payoff, history, lo, hi)
        if take_min:
            right_best = min(right_best, phi_r - d)
            left_best = max(left_best, phi_l - d)
        else:
            right_best = max(right_best, phi_r - d)
            left_best = min(left_best, phi_l - d)

    values[fresh] = fill
    u_new = PiecewiseLinear(z_all, values, float(left_best), float(right_best))
    return SemiStaticHedge(hedge.cash, (*hedge.statics[:-1], u_new), hedge.deltas, hedge.sense)


def extract_hedge(lp_solution: LpSolution, problem: MotProblem) -> SemiStaticHedge:
    """Read the dual back as a hedge.

    Marginal-row duals become the static payouts (dropped rows read 0),
    martingale-row duals the deltas, then two gauges are fixed: each delta
    table is detrended by its mean with the compensating linear terms moved
    into the adjacent statics, and each u_i for i >= 2 is pinned to zero at
    its heaviest atom with the shift absorbed into cash."""
    layout = _layout(problem.system)
    system = problem.system
    n = system.n_dates
    y = np.asarray(lp_solution.dual, dtype=float)
    if y.size != layout.n_rows:
        raise DimensionMismatch("dual vector does not match the assembled row count")

    u_vals = []
    for i in range(n):
        vals = np.zeros(layout.shape[i])
        for k, r in layout.marginal_row[i].items():
            vals[k] = y[r]
        u_vals.append(vals)
    tables = [{hist: float(y[r]) for hist, r in layout.mart_row[j].items()} for j in range(n - 1)]

    cash = 0.0
    for j in range(n - 1):
        if tables[j]:
            beta = -float(np.mean(list(tables[j].values())))
            tables[j] = {h: v + beta for h, v in tables[j].items()}
            u_vals[j] = u_vals[j] + beta * layout.grids[j]
            u_vals[j + 1] = u_vals[j + 1] - beta * layout.grids[j + 1]
    for i in range(1, n):
        heavy = int(np.argmax(system.marginals[i].weights))
        c = float(u_vals[i][heavy])
        u_vals[i] = u_vals[i] - c
        cash += c

    statics = tuple(PiecewiseLinear.from_samples(layout.grids[i], u_vals[i]) for i in range(n))
    deltas = tuple(DeltaTable(tuple(layout.grids[: j + 1]), tables[j]) for j in range(n - 1))
    sense = "sub" if problem.sense == "lower" else "super"
    hedge = SemiStaticHedge(cash, statics, deltas, sense)
    if problem.payoff.kind not in ("tabulated", "custom"):
        hedge = _augment_last_static(hedge, problem.payoff, verification_grids(problem)[-1])
    return hedge


def _coupling_from_primal(primal: np.ndarray, layout: _Layout) -> Coupling:
    keep = np.flatnonzero(primal > MASS_FLOOR)
    indices = np.column_stack(np.unravel_index(keep, layout.shape))
    return Coupling(grids=layout.grids, indices=indices, masses=primal[keep])


def _delta_increments(hedge: SemiStaticHedge, system: MarginalSystem) -> list[float] | None:
    """Mass-weighted mean delta per barrier block of the first pair, reported
    as increments across consecutive blocks.  The continuum dual blows up
    across barriers, so this trend is informative but never asserted."""
    if system.n_dates != 2 or not hedge.deltas:
        return None
    try:
        dec = detect_barriers(system.marginals[0], system.marginals[1])
    except MotboundError:
        return None
    if len(dec.blocks) < 2:
        return None
    mu1 = system.marginals[0]
    means = []
    for block in dec.blocks:
        ks = np.searchsorted(mu1.points, block.sub1.points)
        vals = np.array([hedge.deltas[0].lookup([mu1.points[k]]) for k in ks])
        w = mu1.weights[ks]
        means.append(float(np.dot(vals, w) / w.sum()))
    return [means[k + 1] - means[k] for k in range(len(means) - 1)]


def _diagnostics(problem: MotProblem, value: float, coupling: Coupling,
                 hedge: SemiStaticHedge, extras: dict) -> Diagnostics:
    gap = abs(value - hedge_price(hedge, problem.system))
    extras = dict(extras)
    inc = _delta_increments(hedge, problem.system)
    if inc is not None:
        extras["delta_increments"] = inc
    return Diagnostics(
        duality_gap=float(gap),
        max_marginal_residual=coupling.max_marginal_residual(problem.system),
        max_martingale_residual=coupling.max_martingale_residual(),
        max_slackness_violation=slackness(hedge, coupling, problem.payoff),
        extras=extras,
    )


def bound(problem: MotProblem, *, feas_tol: float = FEAS_TOL, gap_tol: float = GAP_TOL) -> MotResult:
    """Solve for one bound; package value, coupling, hedge and diagnostics.

    If the first dual fails the hedge check (degenerate optima yield several
    duals), the LP is re-solved from scratch under Bland's rule; a second
    failure raises DegenerateDual with the verification report attached."""
    lp, layout = _assemble(problem)
    try:
        sol = solve(lp, feas_tol=feas_tol, gap_tol=gap_tol)
    except Infeasible as exc:
        raise Infeasible(
            "discretized marginals admit no martingale coupling; "
            "re-discretize with barycentric cells to restore convex order"
        ) from exc
    grids = verification_grids(problem)
    hedge = extract_hedge(sol, problem)
    report = verify(hedge, problem.payoff, grids)
    attempts = 1
    if not report.valid:
        sol = solve(lp, feas_tol=feas_tol, gap_tol=gap_tol, bland=True)
        hedge = extract_hedge(sol, problem)
        report = verify(hedge, problem.payoff, grids)
        attempts = 2
        if not report.valid:
            raise DegenerateDual(
                f"no dual optimum passed the hedge check after a Bland re-solve: {report.describe()}")
    coupling = _coupling_from_primal(sol.primal, layout)
    extras = {"lp_rows": lp.n_rows, "lp_cols": lp.n_cols,
              "lp_iterations": sol.iterations, "solve_attempts": attempts,
              "max_verification_violation": report.max_violation}
    diag = _diagnostics(problem, sol.objective, coupling, hedge, extras)
    return MotResult(value=float(sol.objective), coupling=coupling, hedge=hedge,
                     diagnostics=diag, report=report)


def _merge_block_statics(knot_groups, value_groups, left_slope, right_slope) -> PiecewiseLinear:
    knots = np.concatenate(knot_groups)
    values = np.concatenate(value_groups)
    order = np.argsort(knots)
    return PiecewiseLinear(knots[order], values[order], left_slope, right_slope)


def decompose_and_solve(problem: MotProblem, *, feas_tol: float = FEAS_TOL,
                        gap_tol: float = GAP_TOL) -> MotResult:
    """Split a two-date problem at its barriers, solve each block separately,
    and stitch the results back together.

    Any martingale coupling is block diagonal, so the value is the
    mass-weighted sum of block values and the coupling concatenates.  Block
    hedges need a repair step: each block's dual is only fixed up to an
    affine transfer, and the cross-block cells (never charged mass, but still
    constraining the hedge) select the transfers via a small feasibility LP.
    If no transfer works, the monolithic solve supplies the hedge."""
    if problem.system.n_dates != 2:
        raise DimensionMismatch("barrier decomposition applies to two-date problems only")
    mu1, mu2 = problem.system.marginals
    dec = detect_barriers(mu1, mu2)
    if len(dec.blocks) == 1:
        return bound(problem, feas_tol=feas_tol, gap_tol=gap_tol)

    results = []
    for block in dec.blocks:
        sub_system = MarginalSystem([block.sub1, block.sub2])
        results.append(bound(MotProblem(sub_system, problem.payoff, problem.sense),
                             feas_tol=feas_tol, gap_tol=gap_tol))

    masses = np.array([block.mass for block in dec.blocks])
    value = float(np.dot(masses, [r.value for r in results]))

    rows = []
    cell_masses = []
    for block, res in zip(dec.blocks, results):
        off1 = np.searchsorted(mu1.points, block.sub1.points)
        off2 = np.searchsorted(mu2.points, block.sub2.points)
        rows.append(np.column_stack([off1[res.coupling.indices[:, 0]],
                                     off2[res.coupling.indices[:, 1]]]))
        cell_masses.append(res.coupling.masses * block.mass)
    coupling = Coupling(grids=(mu1.points, mu2.points),
                        indices=np.vstack(rows), masses=np.concatenate(cell_masses))

    hedge = _repair_block_hedges(problem, dec, results)
    if hedge is None:
        hedge = bound(problem, feas_tol=feas_tol, gap_tol=gap_tol).hedge
    grids = verification_grids(problem)
    report = verify(hedge, problem.payoff, grids)
    extras = {"blocks": len(dec.blocks), "barrier_levels": [float(x) for x in dec.levels],
              "block_values": [float(r.value) for r in results],
              "max_verification_violation": report.max_violation}
    diag = _diagnostics(problem, value, coupling, hedge, extras)
    return MotResult(value=value, coupling=coupling, hedge=hedge, diagnostics=diag, report=report)


def _repair_block_hedges(problem: MotProblem, dec, results) -> SemiStaticHedge | None:
    """Pick per-block affine transfers (beta_k, gamma_k) making the stitched
    hedge feasible on cross-block cells; None if the LP finds no transfer."""
    mu1, mu2 = problem.system.marginals
    n_blocks = len(dec.blocks)
    sign = 1.0 if problem.sense == "lower" else -1.0

    base_u1, base_u2, base_delta = [], [], []
    for block, res in zip(dec.blocks, results):
        u1, u2 = res.hedge.statics
        base_u1.append((block.sub1.points, u1(block.sub1.points) + res.hedge.cash))
        # Strip u2 to the block's own atoms: augmented knots were filled
        # against in-block histories only, and the global augmentation below
        # re-derives them against every history.
        base_u2.append((block.sub2.points, u2(block.sub2.points), u2.left_slope, u2.right_slope))
        base_delta.append({(int(np.searchsorted(mu1.points, block.sub1.points[k[0]])),):
                           res.hedge.deltas[0].table[k]
                           for k in res.hedge.deltas[0].table})

    block_of_1 = np.concatenate([np.full(b.sub1.points.size, i) for i, b in enumerate(dec.blocks)])
    block_of_2 = np.concatenate([np.full(b.sub2.points.size, i) for i, b in enumerate(dec.blocks)])
    u1_all = np.concatenate([v for _, v in base_u1])
    pts1_all = np.concatenate([p for p, _ in base_u1])
    order1 = np.argsort(pts1_all)
    pts1_all, u1_all, block_of_1 = pts1_all[order1], u1_all[order1], block_of_1[order1]
    delta_all = np.zeros(mu1.points.size)
    for k, res in enumerate(results):
        for key, v in base_delta[k].items():
            delta_all[key[0]] = v

    # Cross-cell slack of the unrepaired stitch; the repair adds
    # (beta_k - beta_l) z + gamma_k - gamma_l on cell (x in block k, z in block l).
    u2_fn = [PiecewiseLinear(kn, vv, ls, rs) for kn, vv, ls, rs in base_u2]
    n_vars = 4 * (n_blocks - 1)

    rows_c, cols_c, vals_c, rhs_c = [], [], [], []
    row = 0
    for i1, x in enumerate(mu1.points):
        k = int(block_of_1[i1])
        for i2, z in enumerate(mu2.points):
            l = int(block_of_2[i2])
            if k == l:
                continue
            phi = payoff_mod.evaluate(problem.payoff, [x, z])
            psi = u1_all[i1] + float(u2_fn[l](z)) + delta_all[i1] * (z - x)
            slack = sign * (phi - psi)
            # sign*((beta_k - beta_l) z + gamma_k - gamma_l) <= slack
            for blk, s in ((k, 1.0), (l, -1.0)):
                if blk == 0:
                    continue
                base = 4 * (blk - 1)
                for col, coef in ((base, z), (base + 1, -z), (base + 2, 1.0), (base + 3, -1.0)):
                    rows_c.append(row)
                    cols_c.append(col)
                    vals_c.append(sign * s * coef)
            rows_c.append(row)
            cols_c.append(n_vars + row)
            vals_c.append(1.0)
            rhs_c.append(slack)
            row += 1
    if row == 0:
        return None

    cost = np.concatenate([np.ones(n_vars), np.zeros(row)])
    try:
        sol = solve(LinearProgram(sense="min", cost=cost, rows=rows_c, cols=cols_c,
                                  vals=vals_c, rhs=rhs_c))
    except MotboundError:
        return None

    beta = np.zeros(n_blocks)
    gamma = np.zeros(n_blocks)
    for blk in range(1, n_blocks):
        base = 4 * (blk - 1)
        beta[blk] = sol.primal[base] - sol.primal[base + 1]
        gamma[blk] = sol.primal[base + 2] - sol.primal[base + 3]

    u1_vals = u1_all + beta[block_of_1] * pts1_all + gamma[block_of_1]
    delta_vals = delta_all + beta[block_of_1]
    u2_groups_k, u2_groups_v = [], []
    for l, (kn, vv, _, _) in enumerate(base_u2):
        u2_groups_k.append(np.asarray(kn))
        u2_groups_v.append(np.asarray(vv) - beta[l] * np.asarray(kn) - gamma[l])
    left = base_u2[0][2] - beta[0]
    right = base_u2[-1][3] - beta[-1]
    u2 = _merge_block_statics(u2_groups_k, u2_groups_v, float(left), float(right))
    u1 = PiecewiseLinear.from_samples(pts1_all, u1_vals)
    table = {(i,): float(delta_vals[i]) for i in range(mu1.points.size)}
    hedge = SemiStaticHedge(0.0, (u1, u2), (DeltaTable((mu1.points,), table),),
                            "sub" if problem.sense == "lower" else "super")
    if problem.payoff.kind not in ("tabulated", "custom"):
        hedge = _augment_last_static(hedge, problem.payoff, verification_grids(problem)[-1])
    return hedge


@dataclass(frozen=True)
class SweepRow:
    strike: float
    lower: float | None
    upper: float | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[SweepRow, ...]

    def to_csv(self) -> str:
        lines = ["strike,lower,upper,status"]
        for r in self.rows:
            if r.ok:
                lines.append(f"{fmt12(r.strike)},{fmt12(r.lower)},{fmt12(r.upper)},ok")
            else:
                msg = (r.error or "failed").replace(",", ";").replace("\n", " ")
                lines.append(f"{fmt12(r.strike)},,,{msg}")
        return "\n".join(lines) + "\n"


def _sweep_row(system: MarginalSystem, strike: float) -> SweepRow:
    payoff = payoff_mod.forward_start_call(strike)
    try:
        lo = bound(MotProblem(system, payoff, "lower")).value
        hi = bound(MotProblem(system, payoff, "upper")).value
        return SweepRow(strike=float(strike), lower=lo, upper=hi)
    except MotboundError as exc:
        return SweepRow(strike=float(strike), lower=None, upper=None, error=str(exc))


def strike_sweep(system: MarginalSystem, strikes) -> SweepTable:
    """Lower/upper forward-start call bounds per strike ratio.  Rows solve
    independently; MOTBOUND_THREADS>1 runs them on a thread pool."""
    if system.n_dates != 2:
        raise DimensionMismatch("strike sweeps cover two-date systems")
    strikes = [float(k) for k in strikes]
    workers = int(os.environ.get("MOTBOUND_THREADS", "1") or "1")
    if workers > 1 and len(strikes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda k: _sweep_row(system, k), strikes))
    else:
        rows = [_sweep_row(system, k) for k in strikes]
    return SweepTable(rows=tuple(rows))


def random_feasible_coupling(system: MarginalSystem, seed: int) -> Coupling:
    """A feasible martingale coupling drawn by optimizing a seeded random
    objective; deterministic per seed."""
    if not system.admissible:
        raise NotAdmissible("marginals are not in convex order")
    layout = _layout(system)
    rng = np.random.default_rng(seed)
    cost = rng.uniform(-1.0, 1.0, size=layout.n_cells)
    lp = _lp_from_layout(layout, system, cost, "lower")
    sol = solve(lp)
    return _coupling_from_primal(sol.primal, layout)


def surface_csv(problem: MotProblem, result: MotResult) -> str:
    """Hedge payout vs payoff over (s1, z) for two-date problems."""
    if problem.system.n_dates != 2:
        raise DimensionMismatch("surface export covers two-date problems")
    grids = verification_grids(problem)
    lines = ["s1,s2,psi,phi,phi_minus_psi"]
    for x in grids[0]:
        z = grids[1]
        psi = result.hedge.evaluate_last_axis([x], z)
        phi = payoff_mod.evaluate_last_axis(problem.payoff, [x], z)
        for zz, a, b in zip(z, psi, phi):
            lines.append(f"{fmt12(x)},{fmt12(zz)},{fmt12(a)},{fmt12(b)},{fmt12(b - a)}")
    return "\n".join(lines) + "\n"
