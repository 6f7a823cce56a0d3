"""Command-line interface: ``mmflow solve|transport|primal|verify|demo|u``.

Exit codes: 0 success, 1 invalid input or usage, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import convex
from .entropy import entropy_decomposition
from .invariants import SUITES, run_all
from .measures import DiscreteMeasure, MeasureError, load_measure, measure_to_dict
from .moment_solver import (SolverError, auto_window, density_on_grid,
                            solve, verify_moment_identity)
from .ot_core import TransportSizeError, max_correlation
from .primal_verify import (demo_csv, hyperplane_divergence_demo,
                            solve_fixed_point)

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _clean(obj):
    """JSON-ready copy: arrays to lists, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(obj, out=None):
    text = json.dumps(_clean(obj), indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _discrete(path) -> DiscreteMeasure:
    m = load_measure(path)
    if not isinstance(m, DiscreteMeasure):
        raise MeasureError(f"{path}: expected a discrete measure")
    return m


def _load_u(path) -> convex.MaxAffineConvex:
    try:
        data = json.loads(Path(path).read_text())
        return convex.MaxAffineConvex.from_dict(data)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise MeasureError(f"malformed convex function: {exc}") from exc


def _grid_spec(text):
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError as exc:
        raise MeasureError(f"grid must be lo:hi:n, got {text!r}") from exc
    if not hi > lo or n < 2:
        raise MeasureError("grid needs lo < hi and at least 2 cells")
    return lo, hi, n


def _threads(args) -> int:
    # accepted for interface compatibility; execution is single-threaded
    raw = args.threads if args.threads is not None else os.environ.get(
        "MMFLOW_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise MeasureError(f"invalid thread count {raw!r}") from exc
    if n < 1:
        raise MeasureError("thread count must be positive")
    return n


# ---------------------------------------------------------------------------
# commands

def cmd_solve(args):
    mu = _discrete(args.mu)
    rep = solve(mu, tol=args.tol, max_iter=args.max_iter, method=args.method,
                seed=args.init_seed)
    _emit(rep.to_dict(), args.out)
    if args.emit_density:
        if mu.dim != 1:
            raise MeasureError("--emit-density is 1D only")
        lo, hi = auto_window(rep.u)
        rho = density_on_grid(rep.u, lo, hi, args.density_cells)
        _emit(measure_to_dict(rho), args.emit_density)
    return EXIT_OK if rep.converged else EXIT_SOLVER


def cmd_transport(args):
    rho, mu = _discrete(args.rho), _discrete(args.mu)
    r = max_correlation(rho, mu)
    entries = r.plan.to_dict()["entries"]
    if args.cost == "dot":
        value = r.value
        duals = {"u": r.duals.u, "u_star": r.duals.u_star}
    else:
        sx = np.sum(rho.atoms ** 2, axis=1)
        sy = np.sum(mu.atoms ** 2, axis=1)
        d2 = sx[r.plan.rows] + sy[r.plan.cols] - 2 * np.einsum(
            "kd,kd->k", rho.atoms[r.plan.rows], mu.atoms[r.plan.cols])
        value = float(np.sum(r.plan.mass * d2))
        duals = {"f": sx - 2 * r.duals.u, "g": sy - 2 * r.duals.u_star}
    _emit({"cost": args.cost, "value": value, "entries": entries,
           "duals": duals}, args.out)
    return EXIT_OK


def cmd_primal(args):
    mu = _discrete(args.mu)
    grid = _grid_spec(args.grid) if args.grid else None
    rep = solve_fixed_point(mu, grid, damping=args.damping, tol=args.tol,
                            max_iter=args.max_iter)
    _emit(rep.to_dict(), args.out)
    return EXIT_OK if rep.converged else EXIT_SOLVER


def cmd_verify(args):
    modules = list(args.modules) + list(args.module or [])
    unknown = sorted(set(modules) - set(SUITES))
    if unknown:
        raise MeasureError(f"unknown module(s) {unknown}; "
                           f"choose from {sorted(SUITES)}")
    if args.rho:
        if modules != ["entropy"]:
            raise MeasureError("--rho goes with 'verify entropy'")
        b = entropy_decomposition(load_measure(args.rho))
        _emit({"e1": b.e1, "e2": b.e2, "e3": b.e3, "total": b.total,
               "box_tail": b.box_tail})
        return EXIT_OK
    checks = run_all(seed=args.seed, modules=modules or None)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        detail = f" ({c.detail})" if c.detail else ""
        print(f"{status} {c.module}: {c.name}{detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_SOLVER


def cmd_demo(args):
    try:
        ns = [float(t) for t in args.n.split(",")]
    except ValueError as exc:
        raise MeasureError(f"--n must be a comma list, got {args.n!r}") from exc
    if args.mu:
        mu = _discrete(args.mu)
    else:
        mu = DiscreteMeasure(np.zeros((1, args.dim)), [1.0])
    sys.stdout.write(demo_csv(hyperplane_divergence_demo(mu, ns)))
    return EXIT_OK


def cmd_u(args):
    u = _load_u(args.u)
    if args.action == "eval":
        if args.x is None:
            raise MeasureError("u eval needs --x")
        pts = np.array(json.loads(args.x), dtype=float)
        if u.dim == 1:
            pts = pts.reshape(-1, 1)
        pts = np.atleast_2d(pts)
        vals, idx = convex.evaluate(u, pts)
        _emit({"values": vals, "index": idx}, args.out)
    elif args.action == "cells":
        p = convex.prune(u)
        c = convex.cells(p)
        if c.dim == 1:
            out = {"active": p.active, "intervals": c.intervals}
        else:
            out = {"active": p.active, "box": c.box,
                   "polygons": {i: c.polygons[i] for i in c.polygons},
                   "unbounded": c.unbounded}
        _emit(out, args.out)
    else:
        z, err = convex.integrate_exp_neg(u)
        ident = verify_moment_identity(u)
        _emit({"Z": z, "rel_err": err, "masses": convex.cell_masses(u),
               "barycenter": convex.barycenter_exp_neg(u),
               "moment_identity_gap": ident.gap}, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="seed for stochastic routines")
    common.add_argument("--threads", type=int, default=None,
                        help="thread count (falls back to MMFLOW_THREADS)")

    p = _Parser(prog="mmflow", description="Moment measures of convex "
                "functions: solver, transport and verification tools.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common],
                       help="recover u from a discrete moment measure")
    s.add_argument("--mu", required=True)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iter", type=int, default=5000)
    s.add_argument("--method", choices=["newton", "gradient"],
                   default="newton")
    s.add_argument("--init-seed", type=int, default=None,
                   help="perturb the initial offsets with this seed")
    s.add_argument("--out")
    s.add_argument("--emit-density")
    s.add_argument("--density-cells", type=int, default=4096)
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("transport", parents=[common],
                       help="exact optimal plan between discrete measures")
    t.add_argument("--rho", required=True)
    t.add_argument("--mu", required=True)
    t.add_argument("--cost", choices=["dot", "sq"], default="dot")
    t.add_argument("--out")
    t.set_defaults(func=cmd_transport)

    q = sub.add_parser("primal", parents=[common],
                       help="grid fixed-point solver for the primal problem")
    q.add_argument("--mu", required=True)
    q.add_argument("--grid", help="lo:hi:n")
    q.add_argument("--damping", type=float, default=0.5)
    q.add_argument("--tol", type=float, default=1e-6)
    q.add_argument("--max-iter", type=int, default=5000)
    q.add_argument("--out")
    q.set_defaults(func=cmd_primal)

    v = sub.add_parser("verify", parents=[common],
                       help="run the invariant checks of every module")
    v.add_argument("modules", nargs="*", metavar="MODULE",
                   help="suites to run (default: all)")
    v.add_argument("--module", action="append")
    v.add_argument("--rho", help="with 'entropy': print the entropy "
                   "decomposition of this grid density as JSON")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("demo", parents=[common], help="tables for plots")
    d.add_argument("which", choices=["hyperplane"])
    d.add_argument("--n", default="1,5,50,500")
    d.add_argument("--mu", help="measure on {last coordinate = 0}")
    d.add_argument("--dim", type=int, default=1)
    d.set_defaults(func=cmd_demo)

    u = sub.add_parser("u", parents=[common],
                       help="inspect a max-affine convex function")
    u.add_argument("action", choices=["eval", "cells", "mass"])
    u.add_argument("--u", required=True)
    u.add_argument("--x", help="JSON point or list of points")
    u.add_argument("--out")
    u.set_defaults(func=cmd_u)
    return p


def _glue_values(argv):
    """Join ``--grid -10:10:n`` into ``--grid=-10:10:n`` so that a negative
    lower bound is not read as an option."""
    out, it = [], iter(argv)
    for tok in it:
        if tok in ("--grid", "--x"):
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def run(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(_glue_values(argv))
        _threads(args)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(parser.format_usage() + str(exc) + "\n")
        return EXIT_INPUT
    except (MeasureError, convex.RecessionError, TransportSizeError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"mmflow: error: {exc}\n")
        return EXIT_INPUT
    except (SolverError, RuntimeError, ArithmeticError) as exc:
        sys.stderr.write(f"mmflow: solver failure: {exc}\n")
        return EXIT_SOLVER
    except ValueError as exc:
        sys.stderr.write(f"mmflow: error: {exc}\n")
        return EXIT_INPUT


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
