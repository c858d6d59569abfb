"""Path payoffs on finitely many dates.

A payoff maps a path (s_1, ..., s_n) to a real number.  The built-in kinds
cover the exotics the solver is exercised on; ``tabulated`` wraps explicit
values on a product grid (exact node lookup only) and ``custom`` wraps an
arbitrary callable together with a declared growth constant.

Every payoff carries ``growth_constant`` K_g certifying the lower bound
phi(s) >= -K_g * (1 + sum |s_i|), which keeps the transport LP bounded below.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, OffGrid

KINDS = (
    "forward_start_call",
    "forward_start_straddle",
    "negated_straddle",
    "asian_call",
    "lookback_call",
    "tabulated",
    "custom",
)


@dataclass(frozen=True)
class Payoff:
    """Payoff of an exotic on ``n`` dates.  Build with the module constructors."""

    kind: str
    n: int
    params: dict
    growth_constant: float
    grids: tuple[np.ndarray, ...] | None = None
    values: np.ndarray | None = None
    fn: Callable[[Sequence[float]], float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.n < 2:
            raise ValueError("need at least two dates")

    def to_json(self) -> dict:
        if self.kind == "custom":
            raise ValueError("custom payoffs have no JSON form")
        params = dict(self.params)
        if self.kind == "tabulated":
            params["grids"] = [[float(x) for x in g] for g in self.grids]
            params["values"] = [float(v) for v in np.asarray(self.values).ravel()]
        return {"kind": self.kind, "n": self.n, "params": params}

    @classmethod
    def from_json(cls, obj: dict) -> "Payoff":
        kind = obj["kind"]
        n = int(obj.get("n", 2))
        params = dict(obj.get("params", {}))
        if kind == "forward_start_call":
            return forward_start_call(float(params.get("strike_ratio", 1.0)))
        if kind == "forward_start_straddle":
            return forward_start_straddle()
        if kind == "negated_straddle":
            return negated_straddle()
        if kind == "asian_call":
            return asian_call(float(params["strike"]), n)
        if kind == "lookback_call":
            return lookback_call(float(params["strike"]), n)
        if kind == "tabulated":
            return tabulated(params["grids"], params["values"])
        raise ValueError(f"cannot build payoff kind {kind!r} from JSON")


def forward_start_call(strike_ratio: float = 1.0) -> Payoff:
    """(s_2 - k * s_1)^+ on two dates."""
    return Payoff(kind="forward_start_call", n=2, params={"strike_ratio": float(strike_ratio)}, growth_constant=0.0)


def forward_start_straddle() -> Payoff:
    """|s_2 - s_1| on two dates."""
    return Payoff(kind="forward_start_straddle", n=2, params={}, growth_constant=0.0)


def negated_straddle() -> Payoff:
    """-|s_2 - s_1| on two dates; minimizing it prices the straddle's upper bound."""
    return Payoff(kind="negated_straddle", n=2, params={}, growth_constant=1.0)


def asian_call(strike: float, n: int = 2) -> Payoff:
    """(mean(s) - K)^+ over all n dates."""
    return Payoff(kind="asian_call", n=n, params={"strike": float(strike)}, growth_constant=0.0)


def lookback_call(strike: float, n: int = 2) -> Payoff:
    """(max(s) - K)^+ over all n dates."""
    return Payoff(kind="lookback_call", n=n, params={"strike": float(strike)}, growth_constant=0.0)


def tabulated(grids: Sequence[Sequence[float]], values) -> Payoff:
    """Explicit values on a product grid; evaluation off the grid raises OffGrid."""
    gs = tuple(np.asarray(g, dtype=float) for g in grids)
    if len(gs) < 2 or any(g.size == 0 or np.any(np.diff(g) <= 0) for g in gs):
        raise ValueError("grids must be nonempty and strictly increasing, one per date")
    shape = tuple(g.size for g in gs)
    vals = np.asarray(values, dtype=float).reshape(shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("tabulated values must be finite")
    growth = float(max(0.0, -vals.min()))
    return Payoff(kind="tabulated", n=len(gs), params={}, growth_constant=growth, grids=gs, values=vals)


def custom(fn: Callable[[Sequence[float]], float], n: int, growth_constant: float) -> Payoff:
    """Arbitrary callable payoff with a caller-certified growth constant."""
    return Payoff(kind="custom", n=n, params={}, growth_constant=float(growth_constant), fn=fn)


def _grid_index(grid: np.ndarray, x: float) -> int:
    j = int(np.searchsorted(grid, x))
    for cand in (j - 1, j):
        if 0 <= cand < grid.size and abs(grid[cand] - x) <= 1e-9 * (1.0 + abs(x)):
            return cand
    raise OffGrid(f"point {x!r} is not a grid node")


def evaluate(payoff: Payoff, s: Sequence[float]) -> float:
    """Payoff value on one path."""
    s = np.asarray(s, dtype=float).ravel()
    if s.size != payoff.n:
        raise DimensionMismatch(f"payoff takes {payoff.n} dates, got {s.size}")
    kind = payoff.kind
    if kind == "forward_start_call":
        return float(max(s[-1] - payoff.params["strike_ratio"] * s[0], 0.0))
    if kind == "forward_start_straddle":
        return float(abs(s[-1] - s[0]))
    if kind == "negated_straddle":
        return float(-abs(s[-1] - s[0]))
    if kind == "asian_call":
        return float(max(s.mean() - payoff.params["strike"], 0.0))
    if kind == "lookback_call":
        return float(max(s.max() - payoff.params["strike"], 0.0))
    if kind == "tabulated":
        idx = tuple(_grid_index(g, x) for g, x in zip(payoff.grids, s))
        return float(payoff.values[idx])
    return float(payoff.fn(tuple(s)))


def evaluate_last_axis(payoff: Payoff, history: Sequence[float], last: np.ndarray) -> np.ndarray:
    """Vectorized payoff over the final date with the history fixed."""
    history = np.asarray(history, dtype=float).ravel()
    last = np.asarray(last, dtype=float).ravel()
    if history.size != payoff.n - 1:
        raise DimensionMismatch(f"history must have {payoff.n - 1} dates, got {history.size}")
    kind = payoff.kind
    if kind == "forward_start_call":
        return np.maximum(last - payoff.params["strike_ratio"] * history[0], 0.0)
    if kind == "forward_start_straddle":
        return np.abs(last - history[0])
    if kind == "negated_straddle":
        return -np.abs(last - history[0])
    if kind == "asian_call":
        return np.maximum((history.sum() + last) / payoff.n - payoff.params["strike"], 0.0)
    if kind == "lookback_call":
        running = history.max() if history.size else -np.inf
        return np.maximum(np.maximum(running, last) - payoff.params["strike"], 0.0)
    if kind == "tabulated":
        idx = tuple(_grid_index(g, x) for g, x in zip(payoff.grids, history))
        cols = np.asarray([_grid_index(payoff.grids[-1], x) for x in last])
        return payoff.values[idx][cols]
    return np.asarray([payoff.fn((*history, float(x))) for x in last])


def tabulate(payoff: Payoff, grids: Sequence[Sequence[float]]) -> np.ndarray:
    """Payoff values over the product grid, flattened row-major in date order.

    The entry for cell (i_1, ..., i_n) sits at flat position
    ``((i_1 * m_2 + i_2) * m_3 + ...) + i_n``.
    """
    gs = [np.asarray(g, dtype=float) for g in grids]
    if len(gs) != payoff.n:
        raise DimensionMismatch(f"payoff takes {payoff.n} dates, got {len(gs)} grids")
    if any(g.size == 0 for g in gs):
        raise ValueError("grids must be nonempty")
    kind = payoff.kind
    mesh = np.meshgrid(*gs, indexing="ij")
    if kind == "forward_start_call":
        out = np.maximum(mesh[-1] - payoff.params["strike_ratio"] * mesh[0], 0.0)
    elif kind == "forward_start_straddle":
        out = np.abs(mesh[-1] - mesh[0])
    elif kind == "negated_straddle":
        out = -np.abs(mesh[-1] - mesh[0])
    elif kind == "asian_call":
        out = np.maximum(sum(mesh) / payoff.n - payoff.params["strike"], 0.0)
    elif kind == "lookback_call":
        running = mesh[0]
        for axis in mesh[1:]:
            running = np.maximum(running, axis)
        out = np.maximum(running - payoff.params["strike"], 0.0)
    elif kind == "tabulated":
        lookups = [np.asarray([_grid_index(pg, x) for x in g]) for pg, g in zip(payoff.grids, gs)]
        out = payoff.values[np.ix_(*lookups)]
    else:
        shape = tuple(g.size for g in gs)
        out = np.empty(shape)
        for idx in np.ndindex(shape):
            out[idx] = payoff.fn(tuple(g[i] for g, i in zip(gs, idx)))
    if not np.all(np.isfinite(out)):
        raise ValueError("payoff produced non-finite values on the grid")
    return np.ascontiguousarray(out).ravel()


def last_coord_kinks(payoff: Payoff, history: Sequence[float]) -> list[float]:
    """Kink locations of s_n -> payoff(history, s_n), used to verify a hedge
    between grid nodes.  Empty for tabulated and custom payoffs, whose
    continuum behaviour is not modelled."""
    history = np.asarray(history, dtype=float).ravel()
    kind = payoff.kind
    if kind == "forward_start_call":
        return [float(payoff.params["strike_ratio"] * history[0])]
    if kind in ("forward_start_straddle", "negated_straddle"):
        return [float(history[0])]
    if kind == "asian_call":
        return [float(payoff.n * payoff.params["strike"] - history.sum())]
    if kind == "lookback_call":
        running = float(history.max()) if history.size else -np.inf
        return [float(payoff.params["strike"]), max(running, float(payoff.params["strike"]))]
    return []
