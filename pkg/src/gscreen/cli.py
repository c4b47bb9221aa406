"""Command-line interface: ``gscreen <command> MODEL [options]``.

MODEL is a model file (JSON) or the name of a shipped model.  Reports are
JSON; tables are CSV with 17 significant digits.

Exit codes: 0 success or definitive verdict, 1 hypothesis failure, 2 input
error, 3 inconclusive verdict, 4 no convergence.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io as gio
from .certify import METHODS, certify
from .errors import ExprError, GScreenError, Infeasible, LeftDomain, NoConvergence
from .geometry import agent_grid, solve_g_segment, utility_from_menu
from .model import builtin_names, check_hypotheses, load_model
from .oracle import enumerate_menus, uniform_grid
from .solver import DiscreteInstance, SolverOptions, solve_principal, verify_solution

EXIT_OK, EXIT_HYPOTHESIS, EXIT_INPUT, EXIT_INCONCLUSIVE, EXIT_NO_CONVERGENCE = 0, 1, 2, 3, 4


class InputError(GScreenError):
    pass


def _vector(text, size, what):
    try:
        v = np.array([float(s) for s in str(text).split(",")], dtype=float)
    except ValueError:
        raise InputError(f"{what}: expected {size} comma-separated numbers, got {text!r}") from None
    if v.size != size:
        raise InputError(f"{what}: expected {size} numbers, got {v.size}")
    return v


def _counts(text, size, what):
    v = _vector(text, 1, what) if "," not in str(text) else _vector(text, size, what)
    if np.any(v < 1) or np.any(v != np.round(v)):
        raise InputError(f"{what}: counts must be positive integers")
    return [int(c) for c in np.broadcast_to(v, (size,))]


def _agents(args, spec):
    """Explicit ``--agent`` points, an ``--agents-file`` CSV (columns x1..xm), or a tensor grid of ``--agents`` counts."""
    if args.agent:
        agents = np.array([_vector(a, spec.m, "--agent") for a in args.agent])
        return agents, spec.weights(agents), None
    if getattr(args, "agents_file", None):
        _, data = gio.read_csv(args.agents_file, [f"x{i + 1}" for i in range(spec.m)])
        return data, spec.weights(data), None
    return agent_grid(spec, _counts(args.agents, spec.m, "--agents"))


def _set_threads(args):
    if getattr(args, "threads", None):
        os.environ["GSCREEN_THREADS"] = str(args.threads)


# --------------------------------------------------------------------------
# commands


def cmd_check(args):
    spec = load_model(args.model)
    report = check_hypotheses(spec, samples=args.samples, seed=args.seed)
    doc = {"model": spec.name, "ok": report.ok, **report.to_dict()}
    gio.write_json(None, doc)
    if args.report:
        gio.write_json(args.report, doc)
    return EXIT_OK if report.ok else EXIT_HYPOTHESIS


def cmd_certify(args):
    spec = load_model(args.model)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise InputError(f"unknown methods {sorted(unknown)}; choose from {', '.join(METHODS)}")
    if "lemma49" not in methods:
        methods.insert(0, "lemma49")
    doc = certify(spec, methods, samples=args.samples, tol=args.tol, seed=args.seed)
    gio.write_json(None, doc)
    if args.out:
        gio.write_json(args.out, doc)
    return EXIT_INCONCLUSIVE if doc["verdict"] == "inconclusive" else EXIT_OK


def cmd_solve(args):
    _set_threads(args)
    spec = load_model(args.model)
    agents, weights, shape = _agents(args, spec)
    opts = SolverOptions(multistart=args.multistart, seed=args.seed, threads=args.threads or 0)
    inst = DiscreteInstance(spec, agents, weights, shape, opts)
    sol = solve_principal(inst)
    check = verify_solution(inst, sol)
    alloc = sol.allocation()
    summary = {
        "model": spec.name,
        "profit": sol.profit,
        "ic_residual": sol.ic_residual,
        "ir_residual": sol.ir_residual,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "seed": sol.seed,
        "feasible": check.feasible,
        "stationarity": check.stationarity,
        "agents": int(agents.shape[0]),
    }
    if args.out:
        gio.write_solution(args.out, spec, alloc)
        gio.write_json(args.summary or f"{args.out}.summary.json", summary)
    else:
        gio.write_solution(None, spec, alloc)
    gio.write_json(sys.stderr if not args.out else None, summary)
    return EXIT_OK if sol.converged else EXIT_NO_CONVERGENCE


def cmd_segment(args):
    spec = load_model(args.model)
    x0 = _vector(args.x0, spec.m, "--x0")
    start = _vector(args.start, spec.n + 1, "--start")
    end = _vector(args.end, spec.n + 1, "--end")
    seg = solve_g_segment(spec, x0, start, end, steps=args.steps)
    rows = np.column_stack([seg.t, seg.points, seg.residuals])
    gio.write_csv(args.out, gio.segment_header(spec), rows)
    return EXIT_OK


def cmd_respond(args):
    spec = load_model(args.model)
    menu = gio.read_menu(args.menu, spec).validate(spec)
    agents, weights, shape = _agents(args, spec)
    alloc = utility_from_menu(spec, menu, agents, weights, shape)
    rows = np.column_stack([alloc.agents, np.reshape(alloc.y, (-1, spec.n)), alloc.z, alloc.values])
    gio.write_csv(args.out, gio.response_header(spec), rows)
    return EXIT_OK


def cmd_oracle(args):
    spec = load_model(args.model)
    agents, weights, _ = _agents(args, spec)
    products = uniform_grid(spec.Y[:, 0], spec.Y[:, 1], args.products)
    prices = np.linspace(spec.Z[0], spec.Z[1], args.prices)
    res = enumerate_menus(spec, agents, products, prices, weights)
    if args.menu_out:
        gio.write_menu(args.menu_out, spec, res.menu)
    summary = {
        "model": spec.name,
        "profit": res.profit,
        "menus_evaluated": res.menus_evaluated,
        "runtime": res.runtime,
        "menu": gio.menu_rows(res.menu),
    }
    if args.out:
        gio.write_solution(args.out, spec, res.allocation)
        gio.write_json(None, summary)
    else:
        gio.write_solution(None, spec, res.allocation)
        gio.write_json(sys.stderr, summary)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_agent_options(p, default_count="11"):
    p.add_argument("--agents", default=default_count, help="agent grid points per X axis, e.g. 11 or 5,7 (default %(default)s)")
    p.add_argument("--agent", action="append", help="explicit agent point x1,...,xm (repeatable; overrides --agents)")
    p.add_argument("--agents-file", help="CSV with header x1..xm listing agents (overrides --agents)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gscreen",
        description="Check, certify and solve screening models.  MODEL is a JSON model file or a shipped model name.",
        epilog=f"Shipped models: {', '.join(builtin_names())}.  Exit codes: 0 ok, 1 hypothesis failure, 2 input error, 3 inconclusive, 4 no convergence.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="sampled checks of the standing hypotheses")
    p.add_argument("model")
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="also write the JSON report here")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("certify", help="concavity certificate for the principal's objective")
    p.add_argument("model")
    p.add_argument("--samples", type=int, default=4096)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", default=",".join(METHODS), help="comma list from %(default)s")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser(
        "solve",
        help="solve the discretized principal's program",
        description="Solution CSV columns: x1..xm, y1..yn, z, u, ic_slack, ir_slack.",
    )
    p.add_argument("model")
    _add_agent_options(p)
    p.add_argument("--multistart", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker cap (env GSCREEN_THREADS)")
    p.add_argument("--out", help="solution CSV path (default stdout)")
    p.add_argument("--summary", help="summary JSON path (default OUT.summary.json)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("segment", help="G-segment between two contracts", description="CSV columns: t, y1..yn, z, residual.")
    p.add_argument("model")
    p.add_argument("--x0", required=True, help="agent x1,...,xm")
    p.add_argument("--start", required=True, help="contract y1,...,yn,z at t=0")
    p.add_argument("--end", required=True, help="contract y1,...,yn,z at t=1")
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--out")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser(
        "respond",
        help="agents' best responses to a menu",
        description="Menu CSV columns: y1..yn, price.  Output CSV columns: x1..xm, y1..yn, z, u.",
    )
    p.add_argument("model")
    p.add_argument("--menu", required=True)
    _add_agent_options(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_respond)

    p = sub.add_parser(
        "oracle",
        help="exhaustive menu search on small grids",
        description="Allocation CSV columns: x1..xm, y1..yn, z, u, ic_slack, ir_slack; menu CSV columns: y1..yn, price.",
    )
    p.add_argument("model")
    _add_agent_options(p, "6")
    p.add_argument("--products", type=int, default=6, help="product grid points per Y axis on cl(Y)")
    p.add_argument("--prices", type=int, default=8, help="price grid points on cl(Z)")
    p.add_argument("--out", help="allocation CSV path (default stdout)")
    p.add_argument("--menu-out", help="best menu CSV path")
    p.set_defaults(func=cmd_oracle)
    return parser


def _diagnostic(exc):
    field = getattr(exc, "field", None)
    src = getattr(exc, "source", None)
    offset = getattr(exc, "offset", None)
    lines = [f"error: {exc}" if field is None else f"error in {field}: {exc}"]
    if src is not None and offset is not None:
        lines += [f"  {src}", "  " + " " * offset + "^"]
    return "\n".join(lines)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NoConvergence, LeftDomain, Infeasible) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (ExprError, GScreenError, OSError, ValueError, KeyError) as exc:
        print(_diagnostic(exc), file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
