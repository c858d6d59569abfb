"""Command-line front end.

Ingests call quotes, builds marginals, runs bounds/hedges/sweeps, and emits
plot-ready CSV and portfolio JSON.  Structured artifacts are JSON, tables are
CSV; every float is printed to 12 significant digits and identical inputs
produce byte-identical outputs.

Exit codes: 0 success, 1 domain errors (infeasible quotes, marginals not in
convex order, LP failures), 2 I/O or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import envelope as env_mod
from . import fixtures
from . import payoff as payoff_mod
from .errors import BadSpec, DimensionMismatch, MotboundError, OffGrid
from .hedge import check_arbitrage, hedge_to_json, price as hedge_price
from .measures import (MarginalSystem, check_convex_order, counterexample_marginals,
                       detect_barriers, from_call_curve, load_call_curves)
from .mot import (MotProblem, bound, decompose_and_solve, fmt12,
                  random_feasible_coupling, strike_sweep, surface_csv)
from .payoff import Payoff

# MotboundError subclasses that signal a misconfigured run rather than a
# genuine domain obstruction; they map to exit 2 like I/O failures.
CONFIG_ERRORS = (BadSpec, DimensionMismatch, OffGrid)


def _jsonify(obj):
    """Floats clipped to 12 significant digits, arrays to lists, keys sorted
    downstream; keeps artifacts diffable across runs."""
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt12(float(obj)))
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_jsonify(obj), sort_keys=True, indent=2) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_system(args) -> MarginalSystem:
    """Marginals either from a system JSON or rebuilt from quoted calls."""
    if getattr(args, "marginals", None):
        data = json.loads(Path(args.marginals).read_text())
        return MarginalSystem.from_json(data)
    if getattr(args, "quotes", None):
        curves = load_call_curves(args.quotes)
        s0 = _spot_from(args, curves)
        return MarginalSystem([from_call_curve(c, s0) for c in curves])
    raise ValueError("need --marginals or --quotes")


def _spot_from(args, curves) -> float:
    if getattr(args, "s0", None) is not None:
        return float(args.s0)
    # For a nonnegative underlying a strike-0 call costs the forward itself.
    ks, cs = curves[0].strikes, curves[0].prices
    at_zero = np.nonzero(np.abs(ks) <= 1e-12)[0]
    if at_zero.size:
        return float(cs[at_zero[0]])
    raise ValueError("pass --s0, or quote strike 0 so the forward can be read off")


def _parse_payoff(text: str, n_dates: int) -> Payoff:
    """A payoff JSON file, or a shorthand like ``forward_start_call:1.05``."""
    path = Path(text)
    if path.suffix.lower() == ".json" or path.exists():
        return Payoff.from_json(json.loads(path.read_text()))
    name, _, arg = text.partition(":")
    if name in ("straddle", "forward_start_straddle"):
        return payoff_mod.forward_start_straddle()
    if name == "negated_straddle":
        return payoff_mod.negated_straddle()
    if name == "forward_start_call":
        return payoff_mod.forward_start_call(float(arg) if arg else 1.0)
    if name == "asian_call":
        return payoff_mod.asian_call(float(arg), n_dates)
    if name == "lookback_call":
        return payoff_mod.lookback_call(float(arg), n_dates)
    raise ValueError(
        f"unknown payoff {text!r}; pass a JSON file or one of straddle, "
        "negated_straddle, forward_start_call[:ratio], asian_call:strike, "
        "lookback_call:strike")


def _parse_strikes(text: str) -> list[float]:
    """Comma list ``0.5,0.7,1.0`` or inclusive range ``0.5:1.5:0.1``."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError("strike range must be start:stop:step with step > 0")
        start, stop, step = parts
        count = int(round((stop - start) / step))
        if abs(start + count * step - stop) > 1e-9 * (1.0 + abs(stop)):
            raise ValueError("strike range: step does not divide the span")
        return [start + k * step for k in range(count + 1)]
    return [float(p) for p in text.split(",") if p.strip()]


def _result_json(res) -> dict:
    return {
        "value": res.value,
        "diagnostics": res.diagnostics.to_json(),
        "hedge": hedge_to_json(res.hedge),
        "hedge_price": None,  # filled by caller with the system in hand
        "verification": {
            "max_violation": res.report.max_violation,
            "checked_cells": res.report.checked_cells,
            "continuum_checked": res.report.continuum_checked,
            "wing_ok": res.report.wing_ok,
        },
    }


def cmd_implied_marginals(args) -> int:
    curves = load_call_curves(args.quotes)
    s0 = _spot_from(args, curves)
    system = MarginalSystem([from_call_curve(c, s0) for c in curves])
    _emit(_dump_json(system.to_json()), args.out)
    for i, m in enumerate(system.marginals, start=1):
        print(f"date {i}: {len(m)} atoms, mean {fmt12(m.mean)}")
    return 0


def cmd_check_order(args) -> int:
    system = _load_system(args)
    report = check_convex_order(system)
    print(report.describe())
    if args.out:
        payload = {
            "admissible": report.admissible,
            "means": report.means,
            "mean_spread": report.mean_spread,
            "pairs": [{"index": p.index, "worst_violation": p.worst_violation,
                       "worst_strike": p.worst_strike} for p in report.pairs],
        }
        Path(args.out).write_text(_dump_json(payload))
    return 0 if report.admissible else 1


def cmd_bounds(args) -> int:
    system = _load_system(args)
    payoff = _parse_payoff(args.payoff, system.n_dates)
    senses = ["lower", "upper"] if args.sense == "both" else [args.sense]
    solver = decompose_and_solve if args.decompose else bound
    out = {"payoff": payoff.to_json(), "results": {}}
    for sense in senses:
        res = solver(MotProblem(system, payoff, sense),
                     feas_tol=args.tol_feas, gap_tol=args.tol_gap)
        entry = _result_json(res)
        entry["hedge_price"] = hedge_price(res.hedge, system)
        out["results"][sense] = entry
        print(f"{sense} {fmt12(res.value)}")
    if args.seed is not None:
        coupling = random_feasible_coupling(system, args.seed)
        expect = coupling.expectation(payoff)
        lo = out["results"].get("lower", {}).get("value")
        hi = out["results"].get("upper", {}).get("value")
        ok = (lo is None or lo - 1e-7 <= expect) and (hi is None or expect <= hi + 1e-7)
        out["sandwich"] = {"seed": args.seed, "expectation": expect, "ok": ok}
        print(f"sandwich(seed={args.seed}) {fmt12(expect)} {'ok' if ok else 'VIOLATED'}")
    if args.out:
        Path(args.out).write_text(_dump_json(out))
    return 0


def cmd_sweep(args) -> int:
    system = _load_system(args)
    strikes = _parse_strikes(args.strikes)
    table = strike_sweep(system, strikes)
    _emit(table.to_csv(), args.out)
    return 0


def cmd_surface(args) -> int:
    system = _load_system(args)
    payoff = _parse_payoff(args.payoff, system.n_dates)
    problem = MotProblem(system, payoff, args.sense)
    res = bound(problem, feas_tol=args.tol_feas, gap_tol=args.tol_gap)
    _emit(surface_csv(problem, res), args.out)
    print(f"{args.sense} {fmt12(res.value)}")
    return 0


def cmd_envelope(args) -> int:
    system = _load_system(args)
    if system.n_dates != 2:
        raise ValueError("the envelope dual covers two-date systems")
    payoff = _parse_payoff(args.payoff, 2)
    mu1, mu2 = system.marginals
    if args.u2:
        grid, u2 = env_mod.u2_from_csv(Path(args.u2).read_text())
    else:
        grid = env_mod.extended_grid(mu1, mu2)
        u2 = np.zeros_like(grid)
    if args.iters > 0:
        dual = env_mod.improve_u2(u2, payoff, mu1, mu2, args.iters, grid=grid)
    else:
        dual = env_mod.evaluate_dual(u2, payoff, mu1, mu2, grid=grid)
    payload = {"value": dual.value, "iters": args.iters,
               "grid": dual.grid, "u2": dual.u2}
    if args.out:
        Path(args.out).write_text(_dump_json(payload))
    print(f"value {fmt12(dual.value)}")
    return 0


def cmd_arb(args) -> int:
    system = _load_system(args)
    payoff = _parse_payoff(args.payoff, system.n_dates)
    lower = bound(MotProblem(system, payoff, "lower"),
                  feas_tol=args.tol_feas, gap_tol=args.tol_gap)
    upper = bound(MotProblem(system, payoff, "upper"),
                  feas_tol=args.tol_feas, gap_tol=args.tol_gap)
    verdict = check_arbitrage(args.quoted, lower, upper)
    print(verdict.describe())
    if args.out:
        payload = {"action": verdict.action, "quoted": verdict.quoted,
                   "lower": verdict.lower, "upper": verdict.upper,
                   "tol": verdict.tol, "strategy": verdict.strategy}
        Path(args.out).write_text(_dump_json(payload))
    return 0


def cmd_counterexample(args) -> int:
    system = counterexample_marginals(args.blocks, args.grid)
    payoff = payoff_mod.negated_straddle()
    res = decompose_and_solve(MotProblem(system, payoff, "lower"),
                              feas_tol=args.tol_feas, gap_tol=args.tol_gap)
    closed = fixtures.counterexample_value(args.blocks)
    edges = fixtures.counterexample_edges(args.blocks)
    dec = detect_barriers(*system.marginals)
    payload = {
        "blocks": args.blocks,
        "atoms_per_block": args.grid,
        "value": res.value,
        "closed_form": closed,
        "relative_error": abs(res.value - closed) / abs(closed),
        "barrier_levels": dec.levels,
        "partial_sums": edges[1:-1],
        "delta_increments": res.diagnostics.extras.get("delta_increments"),
        "diagnostics": res.diagnostics.to_json(),
    }
    print(f"value {fmt12(res.value)} (closed form {fmt12(closed)})")
    increments = payload["delta_increments"] or []
    for i, d in enumerate(increments, start=1):
        print(f"delta increment across barrier {i}: {fmt12(d)}")
    if args.out:
        Path(args.out).write_text(_dump_json(payload))
    return 0


def _add_io_flags(p, *, quotes=True, marginals=True):
    if marginals:
        p.add_argument("--marginals", help="marginal system JSON")
    if quotes:
        p.add_argument("--quotes", help="call quotes CSV or JSON")
        p.add_argument("--s0", type=float, help="spot/forward (else read from a strike-0 quote)")
    p.add_argument("--out", help="output path (default: stdout for the artifact)")


def _add_tol_flags(p):
    p.add_argument("--tol-feas", type=float, default=1e-9, dest="tol_feas",
                   help="LP feasibility tolerance")
    p.add_argument("--tol-gap", type=float, default=1e-7, dest="tol_gap",
                   help="relative duality-gap tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motbound",
        description="Model-independent price bounds and semi-static hedges "
                    "from martingale optimal transport.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("implied-marginals", help="extract marginal laws from call quotes")
    p.add_argument("--quotes", required=True)
    p.add_argument("--s0", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_implied_marginals)

    p = sub.add_parser("check-order", help="report convex-order admissibility")
    _add_io_flags(p)
    p.set_defaults(func=cmd_check_order)

    p = sub.add_parser("bounds", help="price bounds with hedge and diagnostics")
    _add_io_flags(p)
    p.add_argument("--payoff", required=True)
    p.add_argument("--sense", choices=["lower", "upper", "both"], default="both")
    p.add_argument("--decompose", action="store_true",
                   help="split at barriers and solve block by block")
    p.add_argument("--seed", type=int, help="also sandwich-check a seeded random coupling")
    _add_tol_flags(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("sweep", help="forward-start call bounds per strike ratio")
    _add_io_flags(p)
    p.add_argument("--strikes", required=True, help="comma list or start:stop:step")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("surface", help="hedge payout vs payoff over the grid")
    _add_io_flags(p)
    p.add_argument("--payoff", required=True)
    p.add_argument("--sense", choices=["lower", "upper"], default="lower")
    _add_tol_flags(p)
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("envelope", help="convex-envelope dual certificate")
    _add_io_flags(p)
    p.add_argument("--payoff", required=True)
    p.add_argument("--u2", help="starting u2 CSV (default: zeros on the joint grid)")
    p.add_argument("--iters", type=int, default=0, help="coordinate-ascent sweeps")
    p.set_defaults(func=cmd_envelope)

    p = sub.add_parser("arb", help="compare a quote against the model-free interval")
    _add_io_flags(p)
    p.add_argument("--payoff", required=True)
    p.add_argument("--quoted", type=float, required=True)
    _add_tol_flags(p)
    p.set_defaults(func=cmd_arb)

    p = sub.add_parser("counterexample", help="barrier-decomposed negated straddle instance")
    p.add_argument("--blocks", type=int, default=5)
    p.add_argument("--grid", type=int, default=16, help="second-marginal atoms per block")
    p.add_argument("--out")
    _add_tol_flags(p)
    p.set_defaults(func=cmd_counterexample)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MotboundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
