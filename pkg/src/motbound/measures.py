"""Discrete marginal laws, call curves, convex order, and barrier decomposition.

A risk-neutral marginal at one maturity is a finitely supported probability
measure on the line.  Vanilla call quotes pin such a measure down: the call
price curve of a discrete measure is piecewise linear in the strike, and its
second differences recover the atom weights.  A family of marginals admits a
martingale coupling exactly when the means agree and the call curves increase
with maturity (convex order); strikes where two consecutive call curves touch
act as barriers that no coupling crosses, splitting the transport problem into
independent blocks.

Conventions used throughout:

- measures are given by strictly increasing atom positions and positive
  weights summing to one;
- call curves are closed with slope -1 far to the left of the quoted range and
  slope 0 far to the right, which forces total mass one and pins the mean to
  ``first strike + first price``;
- negative strikes and negative support points are permitted without warnings,
  since nothing downstream assumes positivity.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import BadSpec, InfeasibleCurve, MotboundError

# Tolerances.  Weight/mean tolerances are absolute; the convex-order and
# barrier tolerances are shared by the order report and the barrier scan.
WEIGHT_TOL = 1e-12
MEAN_TOL = 1e-10
ORDER_TOL = 1e-10
BARRIER_TOL = 1e-10


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure on the real line.

    Parameters
    ----------
    points : array_like
        Support points.  They are sorted on construction; exact duplicates are
        merged by summing their weights.
    weights : array_like
        Nonnegative weights.  Zero-weight atoms are dropped; the remaining
        weights must sum to one within ``WEIGHT_TOL`` and are renormalized to
        sum to one exactly.

    Attributes
    ----------
    mean : float
        First moment, computed once at construction.
    """

    points: np.ndarray
    weights: np.ndarray
    mean: float = field(init=False)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float).ravel()
        wts = np.asarray(self.weights, dtype=float).ravel()
        if pts.size == 0 or pts.size != wts.size:
            raise ValueError("points and weights must be nonempty and of equal length")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(wts))):
            raise ValueError("points and weights must be finite")
        if np.any(wts < -WEIGHT_TOL):
            raise ValueError("weights must be nonnegative")
        order = np.argsort(pts, kind="stable")
        pts, wts = pts[order], np.maximum(wts[order], 0.0)
        if pts.size > 1 and np.any(np.diff(pts) == 0.0):
            uniq, inverse = np.unique(pts, return_inverse=True)
            wts = np.bincount(inverse, weights=wts)
            pts = uniq
        keep = wts > 0.0
        pts, wts = pts[keep], wts[keep]
        if pts.size == 0:
            raise ValueError("measure has no mass")
        total = float(wts.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total!r}, expected 1")
        wts = wts / total
        pts.setflags(write=False)
        wts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        object.__setattr__(self, "mean", float(pts @ wts))

    def __len__(self) -> int:
        return int(self.points.size)

    def to_json(self) -> dict:
        return {
            "points": [float(p) for p in self.points],
            "weights": [float(w) for w in self.weights],
            "mean": self.mean,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteMeasure":
        measure = cls(np.asarray(obj["points"], dtype=float), np.asarray(obj["weights"], dtype=float))
        if "mean" in obj and abs(measure.mean - float(obj["mean"])) > 1e-8 * (1.0 + abs(measure.mean)):
            raise ValueError("stored mean disagrees with points and weights")
        return measure


def call_price(measure: DiscreteMeasure, strike) -> float | np.ndarray:
    """Undiscounted call value E[(X - K)^+] under ``measure``.

    ``strike`` may be a scalar or an array; the return type matches.
    """
    k = np.asarray(strike, dtype=float)
    scalar = k.ndim == 0
    k2 = np.atleast_1d(k)
    vals = np.maximum(measure.points[:, None] - k2[None, :], 0.0).T @ measure.weights
    return float(vals[0]) if scalar else vals


@dataclass(frozen=True)
class CallCurve:
    """Quoted call prices at one maturity, validated for static no-arbitrage.

    Prices must be nonnegative, non-increasing and convex in the strike, with
    slopes between -1 and 0 (within 1e-10).  Violations raise
    :class:`InfeasibleCurve`.
    """

    maturity_index: int
    strikes: np.ndarray
    prices: np.ndarray

    def __post_init__(self) -> None:
        ks = np.asarray(self.strikes, dtype=float).ravel()
        cs = np.asarray(self.prices, dtype=float).ravel()
        if ks.size < 2 or ks.size != cs.size:
            raise InfeasibleCurve("need at least two quotes with matching strikes and prices")
        if not (np.all(np.isfinite(ks)) and np.all(np.isfinite(cs))):
            raise InfeasibleCurve("quotes must be finite")
        if np.any(np.diff(ks) <= 0):
            raise InfeasibleCurve("strikes must be strictly increasing")
        if np.any(cs < -1e-10):
            raise InfeasibleCurve("call prices must be nonnegative")
        slopes = np.diff(cs) / np.diff(ks)
        if np.any(slopes > 1e-10) or np.any(slopes < -1.0 - 1e-10):
            j = int(np.argmax(np.abs(slopes + 0.5)))
            raise InfeasibleCurve(
                f"slope {slopes[j]:.6g} outside [-1, 0] between strikes "
                f"{ks[j]:.6g} and {ks[j + 1]:.6g}"
            )
        if np.any(np.diff(slopes) < -1e-10):
            j = int(np.argmin(np.diff(slopes)))
            raise InfeasibleCurve(f"curve not convex at strike {ks[j + 1]:.6g}")
        ks.setflags(write=False)
        cs.setflags(write=False)
        object.__setattr__(self, "strikes", ks)
        object.__setattr__(self, "prices", cs)


def from_call_curve(curve: CallCurve, s0: float) -> DiscreteMeasure:
    """Implied measure whose call prices reproduce ``curve`` at every quoted strike.

    The quoted curve is extended with slope -1 to the left and 0 to the right,
    so the atom weight at each strike is the local slope change.  The left
    closure forces mean ``strikes[0] + prices[0]``; this must agree with
    ``s0`` or the quotes are inconsistent with the forward.
    """
    ks, cs = curve.strikes, curve.prices
    slopes = np.concatenate(([-1.0], np.diff(cs) / np.diff(ks), [0.0]))
    masses = np.diff(slopes)
    if np.any(masses < -1e-10):
        j = int(np.argmin(masses))
        raise InfeasibleCurve(f"negative implied mass {masses[j]:.3g} at strike {ks[j]:.6g}")
    implied_mean = float(ks[0] + cs[0])
    if abs(implied_mean - s0) > 1e-8 * (1.0 + abs(s0)):
        raise InfeasibleCurve(
            f"curve implies mean {implied_mean:.12g}, but s0 = {s0:.12g}; "
            "extend the quoted strike range or fix the forward"
        )
    masses = np.maximum(masses, 0.0)
    return DiscreteMeasure(ks, masses)


@dataclass
class PairOrderReport:
    """Worst convex-order violation between marginals ``index`` and ``index + 1``."""

    index: int
    worst_violation: float
    worst_strike: float

    @property
    def ok(self) -> bool:
        return self.worst_violation <= ORDER_TOL


@dataclass
class OrderReport:
    means: list[float]
    mean_spread: float
    means_ok: bool
    pairs: list[PairOrderReport]
    admissible: bool

    def describe(self) -> str:
        if self.admissible:
            return "admissible: means agree and call prices increase with maturity"
        parts = []
        if not self.means_ok:
            parts.append(f"means differ by {self.mean_spread:.3g}")
        for p in self.pairs:
            if not p.ok:
                parts.append(
                    f"marginal {p.index} dominates marginal {p.index + 1} by "
                    f"{p.worst_violation:.3g} at strike {p.worst_strike:.12g}"
                )
        return "not admissible: " + "; ".join(parts)


@dataclass
class MarginalSystem:
    """Marginal laws for dates t_1 < ... < t_n sharing a common mean.

    ``s0`` is the common mean (the forward), taken from the first marginal.
    ``admissible`` is set by :func:`check_convex_order`, which runs at
    construction; the flag is not mutated afterwards by this package.
    """

    marginals: list[DiscreteMeasure]
    s0: float = field(init=False)
    admissible: bool = field(init=False)

    def __post_init__(self) -> None:
        if len(self.marginals) < 2:
            raise ValueError("need at least two maturities")
        self.marginals = list(self.marginals)
        self.s0 = self.marginals[0].mean
        self.admissible = False
        check_convex_order(self)

    @property
    def n_dates(self) -> int:
        return len(self.marginals)

    def to_json(self) -> dict:
        return {"s0": self.s0, "marginals": [m.to_json() for m in self.marginals]}

    @classmethod
    def from_json(cls, obj: dict) -> "MarginalSystem":
        return cls([DiscreteMeasure.from_json(m) for m in obj["marginals"]])


def check_convex_order(system: MarginalSystem) -> OrderReport:
    """Convex-order test: equal means and, for each consecutive pair, call
    prices non-decreasing in maturity at every strike.

    Checking the union of the pair's atom positions suffices because both
    call curves are piecewise linear with kinks only at their own atoms.
    Sets ``system.admissible``.
    """
    means = [m.mean for m in system.marginals]
    mean_spread = float(max(means) - min(means))
    means_ok = mean_spread <= MEAN_TOL
    pairs: list[PairOrderReport] = []
    for i in range(len(system.marginals) - 1):
        lo, hi = system.marginals[i], system.marginals[i + 1]
        grid = np.union1d(lo.points, hi.points)
        gap = call_price(lo, grid) - call_price(hi, grid)
        j = int(np.argmax(gap))
        pairs.append(PairOrderReport(index=i, worst_violation=float(gap[j]), worst_strike=float(grid[j])))
    admissible = means_ok and all(p.ok for p in pairs)
    system.admissible = admissible
    return OrderReport(means=means, mean_spread=mean_spread, means_ok=means_ok, pairs=pairs, admissible=admissible)


# ---------------------------------------------------------------------------
# Densities and discretization


@dataclass(frozen=True)
class DensitySpec:
    """Density with compact support, either piecewise linear (exact integrals)
    or a plain callable (integrated numerically).

    Use the constructors: :meth:`uniform`, :meth:`piecewise_linear`,
    :meth:`from_pdf`.
    """

    support: tuple[float, float]
    pdf: Callable[[float], float] | None = None
    xs: np.ndarray | None = None
    ys: np.ndarray | None = None

    @classmethod
    def uniform(cls, a: float, b: float) -> "DensitySpec":
        if not b > a:
            raise BadSpec("uniform support must have positive length")
        h = 1.0 / (b - a)
        return cls.piecewise_linear([a, b], [h, h])

    @classmethod
    def piecewise_linear(cls, xs: Sequence[float], ys: Sequence[float]) -> "DensitySpec":
        x = np.asarray(xs, dtype=float)
        y = np.asarray(ys, dtype=float)
        if x.size < 2 or x.size != y.size or np.any(np.diff(x) <= 0):
            raise BadSpec("breakpoints must be strictly increasing and match values")
        if np.any(y < 0) or not np.all(np.isfinite(y)):
            raise BadSpec("density values must be finite and nonnegative")
        total = float(np.trapezoid(y, x))
        if total <= 0:
            raise BadSpec("density has no mass")
        y = y / total
        x.setflags(write=False)
        y.setflags(write=False)
        return cls(support=(float(x[0]), float(x[-1])), pdf=None, xs=x, ys=y)

    @classmethod
    def from_pdf(cls, pdf: Callable[[float], float], a: float, b: float) -> "DensitySpec":
        if not (math.isfinite(a) and math.isfinite(b) and b > a):
            raise BadSpec("support must be a finite interval")
        return cls(support=(a, b), pdf=pdf, xs=None, ys=None)

    # Exact segment integrals for the piecewise-linear case.
    def _segment_mass(self, a: float, b: float) -> float:
        x, y = self.xs, self.ys
        lo = max(a, x[0])
        hi = min(b, x[-1])
        if hi <= lo:
            return 0.0
        cuts = np.unique(np.concatenate(([lo, hi], x[(x > lo) & (x < hi)])))
        ya = np.interp(cuts[:-1], x, y)
        yb = np.interp(cuts[1:], x, y)
        return float(np.sum((ya + yb) * np.diff(cuts)) / 2.0)

    def _segment_moment(self, a: float, b: float) -> float:
        x, y = self.xs, self.ys
        lo = max(a, x[0])
        hi = min(b, x[-1])
        if hi <= lo:
            return 0.0
        cuts = np.unique(np.concatenate(([lo, hi], x[(x > lo) & (x < hi)])))
        total = 0.0
        for u, v in zip(cuts[:-1], cuts[1:]):
            yu = float(np.interp(u, x, y))
            yv = float(np.interp(v, x, y))
            # density y(s) = yu + slope*(s-u) on [u, v]; integrate s*y(s) exactly
            slope = (yv - yu) / (v - u)
            c0 = yu - slope * u
            total += c0 * (v**2 - u**2) / 2.0 + slope * (v**3 - u**3) / 3.0
        return total

    def mass(self, a: float, b: float) -> float:
        if self.xs is not None:
            return self._segment_mass(a, b)
        lo, hi = max(a, self.support[0]), min(b, self.support[1])
        if hi <= lo:
            return 0.0
        val, _ = integrate.quad(self.pdf, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
        return float(val)

    def moment(self, a: float, b: float) -> float:
        if self.xs is not None:
            return self._segment_moment(a, b)
        lo, hi = max(a, self.support[0]), min(b, self.support[1])
        if hi <= lo:
            return 0.0
        val, _ = integrate.quad(lambda s: s * self.pdf(s), lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
        return float(val)


def discretize(spec: DensitySpec, m: int) -> DiscreteMeasure:
    """Barycentric discretization: split the support into ``m`` cells of equal
    probability mass and place each cell's mass at its conditional mean.

    Cell sums of exact integrals make the discrete mean equal the continuous
    mean (up to roundoff for piecewise-linear densities, up to quadrature
    accuracy otherwise).  Falls back to equal-width cells if the quantile
    solve fails for a callable density.
    """
    if m < 2:
        raise ValueError("need at least two cells")
    a, b = spec.support
    total = spec.mass(a, b)
    if not math.isfinite(total) or total <= 0:
        raise BadSpec("density mass could not be computed")

    def edges_equal_mass() -> np.ndarray:
        targets = total * np.arange(1, m) / m
        cuts = [a]
        for t in targets:
            sol = optimize.brentq(lambda s: spec.mass(a, s) - t, a, b, xtol=1e-13, rtol=8.9e-16)
            cuts.append(float(sol))
        cuts.append(b)
        return np.asarray(cuts)

    try:
        edges = edges_equal_mass()
        if np.any(np.diff(edges) < 0):
            raise ValueError
    except (ValueError, RuntimeError):
        edges = np.linspace(a, b, m + 1)

    pts, wts = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        w = spec.mass(lo, hi)
        if w <= 0:
            continue
        pts.append(spec.moment(lo, hi) / w)
        wts.append(w / total)
    if not pts:
        raise BadSpec("discretization produced no cells with mass")
    if not all(math.isfinite(p) for p in pts):
        raise BadSpec("cell mean could not be computed")
    return DiscreteMeasure(np.asarray(pts), np.asarray(wts))


# ---------------------------------------------------------------------------
# Barriers


@dataclass(frozen=True)
class Block:
    """One barrier block: both marginals restricted to (lo, hi) and renormalized."""

    lo: float
    hi: float
    mass: float
    sub1: DiscreteMeasure
    sub2: DiscreteMeasure


@dataclass(frozen=True)
class BarrierDecomposition:
    levels: np.ndarray
    blocks: list[Block]

    def __iter__(self):
        return iter(self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)


def detect_barriers(mu1: DiscreteMeasure, mu2: DiscreteMeasure, tol: float = BARRIER_TOL) -> BarrierDecomposition:
    """Levels where the two call curves coincide, with the induced blocks.

    The call-price difference D = C2 - C1 is piecewise linear with kinks only
    at atoms, and D >= 0 under convex order.  Mass cannot cross any level
    where D vanishes, so a gap between consecutive atoms of the pooled support
    with D <= tol at both ends separates the atoms on either side.  Within
    such a gap, the reported level is the zero crossing of the flanking
    mid-step CDF interpolations: with entering slope sL = |D'| left of the gap
    and exiting slope sR right of it, the level is
    ``(sR*g_left + sL*g_right) / (sL + sR)`` (midpoint when both slopes
    vanish, i.e. when the curves agree on a whole neighborhood).

    A coincidence isolated exactly at an interior atom (D positive in both
    adjacent gaps) does not split: the two would-be blocks can both place mass
    on that atom, so no clean partition of the support exists there.
    """
    grid = np.union1d(mu1.points, mu2.points)
    diff = np.asarray(call_price(mu2, grid)) - np.asarray(call_price(mu1, grid))
    m = grid.size
    cut_gaps: list[int] = []
    levels: list[float] = []
    for k in range(m - 1):
        if diff[k] <= tol and diff[k + 1] <= tol:
            width_l = grid[k] - grid[k - 1] if k >= 1 else 0.0
            width_r = grid[k + 2] - grid[k + 1] if k + 2 < m else 0.0
            s_left = max((diff[k - 1] - diff[k]) / width_l, 0.0) if width_l > 0 else 0.0
            s_right = max((diff[k + 2] - diff[k + 1]) / width_r, 0.0) if width_r > 0 else 0.0
            if s_left > tol and s_right > tol:
                level = (s_right * grid[k] + s_left * grid[k + 1]) / (s_left + s_right)
            else:
                # curves agree on a whole neighborhood on at least one side;
                # any level in the gap separates, so report the midpoint
                level = (grid[k] + grid[k + 1]) / 2.0
            cut_gaps.append(k)
            levels.append(float(level))

    # Assign atoms to blocks by their position in the pooled grid so an atom
    # can never sit on the wrong side of a cut through float comparisons.
    cut_idx = np.asarray(cut_gaps)
    u1 = np.searchsorted(grid, mu1.points)
    u2 = np.searchsorted(grid, mu2.points)
    b1 = np.searchsorted(cut_idx, u1, side="left")
    b2 = np.searchsorted(cut_idx, u2, side="left")
    bounds = np.concatenate(([-np.inf], np.asarray(levels), [np.inf]))
    blocks: list[Block] = []
    for k in range(len(levels) + 1):
        in1 = b1 == k
        in2 = b2 == k
        w1 = float(mu1.weights[in1].sum())
        w2 = float(mu2.weights[in2].sum())
        if w1 <= 0 and w2 <= 0:
            continue
        if abs(w1 - w2) > 1e-9 or w1 <= 0 or w2 <= 0:
            raise MotboundError(
                f"block ({bounds[k]:.6g}, {bounds[k + 1]:.6g}) holds mass {w1:.12g} under "
                f"the first marginal but {w2:.12g} under the second; barriers are inconsistent"
            )
        sub1 = DiscreteMeasure(mu1.points[in1], mu1.weights[in1] / w1)
        sub2 = DiscreteMeasure(mu2.points[in2], mu2.weights[in2] / w2)
        blocks.append(Block(lo=float(bounds[k]), hi=float(bounds[k + 1]), mass=w1, sub1=sub1, sub2=sub2))
    return BarrierDecomposition(levels=np.asarray(levels), blocks=blocks)


def counterexample_marginals(n_blocks: int, m2_per_block: int) -> MarginalSystem:
    """Marginal pair with prescribed barriers at the partial sums of 1/i^2.

    The first marginal puts mass l_i/2 at the midpoint of each interval
    I_i = [sum_{j<i} 1/j^2, sum_{j<=i} 1/j^2] for i <= n_blocks, plus the
    residual mass at the midpoint of the remaining interval up to 2.  The
    second marginal discretizes the uniform law on [0, 2] barycentrically
    with ``m2_per_block`` atoms per block, aligned with the same intervals,
    so each block is forced to couple the single first-date atom with the
    block's uniform mass.
    """
    if n_blocks < 1 or m2_per_block < 1:
        raise ValueError("need at least one block and one atom per block")
    edges = [0.0]
    for i in range(1, n_blocks + 1):
        edges.append(edges[-1] + 1.0 / i**2)
    if edges[-1] >= 2.0:
        raise ValueError("too many blocks: intervals exceed [0, 2]")
    edges.append(2.0)
    edges = np.asarray(edges)

    mids = (edges[:-1] + edges[1:]) / 2.0
    masses = np.diff(edges) / 2.0
    mu1 = DiscreteMeasure(mids, masses / masses.sum())

    pts2, wts2 = [], []
    for lo, hi, w in zip(edges[:-1], edges[1:], masses):
        block_pts = lo + (hi - lo) * (2 * np.arange(m2_per_block) + 1) / (2 * m2_per_block)
        pts2.extend(block_pts)
        wts2.extend([w / m2_per_block] * m2_per_block)
    wts2 = np.asarray(wts2)
    mu2 = DiscreteMeasure(np.asarray(pts2), wts2 / wts2.sum())
    return MarginalSystem([mu1, mu2])


# ---------------------------------------------------------------------------
# Quote ingestion


def load_call_curves(path: str | Path) -> list[CallCurve]:
    """Read call quotes from CSV (maturity_index, strike, price) or JSON
    ([{"i": ..., "K": ..., "C": ...}, ...]); one curve per maturity index."""
    path = Path(path)
    rows: list[tuple[int, float, float]] = []
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith(("[", "{")):
        data = json.loads(text)
        for rec in data:
            rows.append((int(rec["i"]), float(rec["K"]), float(rec["C"])))
    else:
        reader = csv.DictReader(text.splitlines())
        if reader.fieldnames is None or not {"maturity_index", "strike", "price"} <= set(reader.fieldnames):
            raise ValueError("quotes CSV needs columns maturity_index, strike, price")
        for rec in reader:
            rows.append((int(rec["maturity_index"]), float(rec["strike"]), float(rec["price"])))
    if not rows:
        raise ValueError(f"no quotes found in {path}")
    by_index: dict[int, list[tuple[float, float]]] = {}
    for i, k, c in rows:
        by_index.setdefault(i, []).append((k, c))
    curves = []
    for i in sorted(by_index):
        quotes = sorted(by_index[i])
        ks = np.asarray([q[0] for q in quotes])
        cs = np.asarray([q[1] for q in quotes])
        curves.append(CallCurve(maturity_index=i, strikes=ks, prices=cs))
    return curves
