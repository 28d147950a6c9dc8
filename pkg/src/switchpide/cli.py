"""Command-line entry point.

Exit codes: 0 success, 1 runtime error, 2 failed assumption check (message
carries the assumption tag), 64 usage error or malformed problem file.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys

import numpy as np

from . import __version__
from .barrier import BarrierParams, calibrate_c, lower_barrier, upper_barrier
from .expressions import ExpressionError, FieldEvaluationError
from .levy import IntegrabilityError
from .model import ProblemSpec, SpecError, make_sample_plan, validate_assumptions
from .oracle import DPOracleConfig, MCOracleConfig, OracleError, dp_oracle, mc_oracle
from .outputs import RunManifest, csv_text, fmt
from .solver import BOUNDARY_RULES, SolverConfig, solve
from .switchgraph import LoopViolation, triangle_closure
from .verify import (
    PerturbationPlan,
    PlanError,
    comparison_experiment,
    continuous_dependence_experiment,
    regularity_experiment,
)

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    """Bad command-line input discovered after parsing."""


class ValidationFailure(Exception):
    """An assumption check failed; the message names the tag."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ helpers
def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _grid_counts(text: str | None, n: int):
    if text is None:
        return None, None
    vals = _floats(text)
    if len(vals) < 2 or any(v != int(v) for v in vals):
        raise UsageError("--grid takes NX,NT (or NX0,NX1,NT in two dimensions) as integers")
    vals = [int(v) for v in vals]
    nx = tuple(vals[:-1]) if len(vals) > 2 else (vals[0],) * n
    if len(nx) != n:
        raise UsageError(f"--grid gives {len(nx)} axis counts for a {n}-dimensional problem")
    return nx, vals[-1]


def _box(text: str | None, spec: ProblemSpec):
    if text is None:
        return spec.box
    vals = _floats(text)
    if len(vals) != 2 * spec.n:
        raise UsageError(f"--box needs {2 * spec.n} numbers lo,hi per axis")
    return tuple((vals[2 * k], vals[2 * k + 1]) for k in range(spec.n))


def _point(text: str, n: int) -> np.ndarray:
    vals = _floats(text)
    if len(vals) != n:
        raise UsageError(f"point {text!r} must have {n} coordinates")
    return np.array(vals)


def _load(args) -> ProblemSpec:
    return ProblemSpec.from_file(args.spec)


def _grid(args, spec: ProblemSpec, default=None):
    nx, nt = _grid_counts(args.grid, spec.n)
    if nx is None and default is not None and spec.nx is None:
        nx, nt = (default[0],) * spec.n, default[1]
    box = _box(getattr(args, "box", None), spec)
    if box is None:
        raise UsageError("no grid box: add a 'grid' section to the problem file or pass --box")
    return spec.grid(nx=nx, nt=nt, box=box)


def _emit(args, name: str, header, rows, manifest: RunManifest | None):
    if manifest is None:
        sys.stdout.write(csv_text(header, rows))
    else:
        manifest.csv(name, header, rows)


def _manifest(args, config: dict):
    if getattr(args, "out", None) is None:
        return None
    return RunManifest(args.out, " ".join(shlex.quote(a) for a in args._argv), args.spec, config)


def _validate_or_fail(spec: ProblemSpec, box) -> list[str]:
    report = validate_assumptions(spec, make_sample_plan(box, spec.T))
    lines = report.lines()
    if not report.passed:
        failed = "; ".join(report.checks[t].line() for t in report.failed())
        raise ValidationFailure(f"validation failed: {failed}")
    return lines


def _solver_config(args, grid) -> SolverConfig:
    return SolverConfig(
        grid=grid,
        obstacle_tol=args.tol,
        theta=args.theta,
        boundary=args.boundary,
        linear_solver=args.linear_solver,
    )


# ----------------------------------------------------------------- commands
def cmd_validate(args) -> int:
    spec = _load(args)
    box = _box(args.box, spec) or tuple((-1.0, 1.0) for _ in range(spec.n))
    report = validate_assumptions(spec, make_sample_plan(box, spec.T, n_points=args.samples))
    for line in report.lines():
        print(line)
    if not report.passed:
        tags = ", ".join(f"({t})" for t in report.failed())
        print(f"validation failed: {tags}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"all {len(report.checks)} assumption groups passed")
    return EXIT_OK


def cmd_close_costs(args) -> int:
    spec = _load(args)
    closed = triangle_closure(spec.costs)
    if not args.x:
        raise UsageError("close-costs needs at least one --x point")
    X = np.stack([_point(p, spec.n) for p in args.x])
    C = closed(X, args.t)
    m = spec.m
    header = [f"x{k}" for k in range(spec.n)] + ["t"] + [f"c{i}{j}" for i in range(m) for j in range(m)]
    rows = [[*X[q], args.t, *C[q].ravel()] for q in range(X.shape[0])]
    man = _manifest(args, {"t": args.t})
    _emit(args, "closed_costs.csv", header, rows, man)
    if man:
        man.close()
    return EXIT_OK


def cmd_quadrature(args) -> int:
    spec = _load(args)
    header = ["mode", "kind", "index"] + [f"z{k}" for k in range(max(j.ell for j in spec.jumps))] + ["weight", "inner"]
    rows = []
    ell = len(header) - 5
    for i, q in enumerate(spec.quadratures(args.qtol)):
        for k, (z, w, inner) in enumerate(zip(q.nodes, q.weights, q.inner)):
            rows.append([i, "node", k, *np.pad(z, (0, ell - z.size)), w, bool(inner)])
        for k, (z, w) in enumerate(zip(q.small_nodes, q.small_weights)):
            rows.append([i, "small", k, *np.pad(z, (0, ell - z.size)), w, True])
    man = _manifest(args, {"quadrature_tol": args.qtol})
    _emit(args, "quadrature.csv", header, rows, man)
    if man:
        man.close()
    return EXIT_OK


def _params(args, spec: ProblemSpec, c=None) -> BarrierParams:
    y = _point(args.y, spec.n) if args.y else np.zeros(spec.n)
    s = spec.T if args.s is None else args.s
    if not 0 <= args.anchor_mode < spec.m:
        raise UsageError(f"--anchor-mode must lie in 0..{spec.m - 1}")
    c = c or args.c or spec.K * 2.0 ** (spec.p + 1)
    return BarrierParams(c=c, lam=args.lam, y=y, s=s, i=args.anchor_mode, h=spec.terminal, p=spec.p)


def cmd_barrier(args) -> int:
    spec = _load(args)
    if spec.m > 1:
        spec = spec.with_closed_costs()
    grid = _grid(args, spec, default=(41, 21))
    params = _params(args, spec)
    t = params.s if args.t is None else args.t
    X = grid.points()
    header = [f"x{k}" for k in range(spec.n)] + ["t", "mode", "upper", "lower"]
    rows = []
    for j in range(spec.m):
        up = upper_barrier(params, spec.costs, j, X, t)
        lo = lower_barrier(params, j, X, t)
        rows += [[*X[q], t, j, up[q], lo[q]] for q in range(X.shape[0])]
    man = _manifest(args, {"c": params.c, "lam": params.lam, "y": params.y, "s": params.s, "i": params.i, "t": t})
    _emit(args, "barrier.csv", header, rows, man)
    if man:
        man.close()
    return EXIT_OK


def cmd_calibrate(args) -> int:
    spec = _load(args)
    grid = _grid(args, spec, default=(41, 21))
    template = _params(args, spec, c=1.0)
    report = calibrate_c(spec, template, grid.points(), grid.times())
    print(f"c* = {fmt(report.c_star)}")
    print(f"worst margin {fmt(report.worst_residual)} at {json.dumps(report.worst_node)}")
    print(f"terminal floor K*2^(p+1) = {fmt(report.terminal_floor)}; evaluations {report.evaluations}")
    man = _manifest(args, {"lam": template.lam, "y": template.y, "s": template.s, "i": template.i})
    if man:
        man.csv("calibration.csv", ["c", "margin"], report.history)
        man.json("calibration.json", {"c_star": report.c_star, "worst_residual": report.worst_residual,
                                      "worst_node": report.worst_node, "terminal_floor": report.terminal_floor})
        man.close()
    return EXIT_OK


def cmd_solve(args) -> int:
    spec = _load(args)
    grid = _grid(args, spec)
    if not args.no_validate:
        _validate_or_fail(spec.with_closed_costs() if spec.m > 1 else spec, grid.box)
    cfg = _solver_config(args, grid)
    result = solve(spec, cfg)
    if args.out is None:
        raise UsageError("solve needs --out DIR")
    man = _manifest(args, {"grid": result.diagnostics["grid"], "tol": args.tol, "theta": args.theta,
                           "boundary": args.boundary, "linear_solver": args.linear_solver})
    X = grid.points()
    times = grid.times()
    U = result.u.flat()
    header = [f"x{k}" for k in range(spec.n)] + ["t", "u", "residual", "binding_mode"]
    for i in range(spec.m):
        rows = []
        for k, t in enumerate(times):
            for q in range(grid.size):
                rows.append([*X[q], t, U[i, k, q], result.residuals[i, k, q], result.binding[i, k, q]])
        man.csv(f"mode_{i}.csv", header, rows)
    diag = dict(result.diagnostics)
    diag.pop("elapsed_s", None)
    man.json("diagnostics.json", diag)
    man.close()
    print(f"solved {spec.m} mode(s) on {grid.size} nodes x {grid.nt} levels; "
          f"max interior residual {fmt(result.max_residual())}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    spec = _load(args)
    x0 = _point(args.x0, spec.n) if args.x0 else np.zeros(spec.n)
    if args.kind == "dp":
        cfg = DPOracleConfig(nt_coarse=args.nt_coarse, substeps=args.substeps)
        vals = dp_oracle(spec, x0, cfg)
        header = ["mode", "value"]
        rows = [[i, v] for i, v in enumerate(vals)]
        echo = {"kind": "dp", "x0": x0, "nt_coarse": cfg.nt_coarse, "substeps": cfg.substeps}
    else:
        cfg = MCOracleConfig(paths=args.paths, dt_sim=args.dt_sim, seed=args.seed,
                             antithetic=args.antithetic, threads=args.threads)
        res = mc_oracle(spec, x0, args.t0, cfg)
        header = ["estimate", "se", "paths", "seed"]
        rows = [[res.estimate, res.se, res.paths, cfg.seed]]
        echo = {"kind": "mc", "x0": x0, "t0": args.t0, **res.to_dict()}
    man = _manifest(args, echo)
    _emit(args, "oracle.csv", header, rows, man)
    if man:
        man.json("oracle.json", echo)
        man.close()
    else:
        print("# config " + json.dumps({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in echo.items()}, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = _load(args)
    grid = _grid(args, spec)
    cfg = _solver_config(args, grid)
    if args.kind == "reg":
        report = regularity_experiment(spec, cfg, slack=args.slack)
        rows = [[g, v] for g, v in zip(report.gaps, report.increments)]
        header = ["gap", "sup_increment"]
    else:
        if args.plan is None:
            raise UsageError(f"verify {args.kind} needs --plan FILE")
        plan = PerturbationPlan.from_file(args.plan)
        if args.kind == "cd":
            report = continuous_dependence_experiment(spec, plan, cfg)
            d = report.differences
            header = ["quantity", "value"]
            rows = [["sup_abs_diff", report.sup_diff], ["sup_u_minus_uhat", report.sup_u_minus_uhat],
                    ["sup_uhat_minus_u", report.sup_uhat_minus_u], ["sharp_bound", report.sharp_bound],
                    ["c_terms", report.c_terms], ["implied_C", report.implied_C if report.implied_C is not None else float("nan")]]
            rows += [[f"diff_{k}", v] for k, v in d.items()]
        else:
            report = comparison_experiment(spec, plan, cfg, tol=args.cmp_tol)
            header = ["quantity", "value"]
            rows = [["worst_violation", report.worst_violation], ["tol", report.tol], ["passed", report.passed]]
    print(report.line())
    man = _manifest(args, {"kind": args.kind, "grid": [list(grid.nx), grid.nt], "tol": args.tol})
    _emit(args, f"verify_{args.kind}.csv", header, rows, man)
    if man:
        man.json(f"verify_{args.kind}.json", report.to_dict())
        man.close()
    return EXIT_OK


# ------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--spec", required=True, help="problem file (JSON)")
    common.add_argument("--grid", help="NX,NT (or NX0,NX1,NT)")
    common.add_argument("--box", help="lo,hi per axis; overrides the problem file")
    common.add_argument("--out", help="output directory; CSV goes to stdout when omitted")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--tol", type=float, default=1e-8, help="obstacle tolerance")

    solver_opts = _Parser(add_help=False)
    solver_opts.add_argument("--theta", type=float, default=1.0)
    solver_opts.add_argument("--boundary", choices=[b for b in BOUNDARY_RULES if b != "barrier"], default="terminal-shift")
    solver_opts.add_argument("--linear-solver", choices=["direct", "bicgstab"], default="direct")

    anchor = _Parser(add_help=False)
    anchor.add_argument("--anchor-mode", type=int, default=0)
    anchor.add_argument("--y", help="anchor point")
    anchor.add_argument("--lam", type=float, default=1.0)
    anchor.add_argument("--s", type=float, help="anchor time (default T)")

    parser = _Parser(prog="switchpide", description="Switching-system PIDE solver and verification harness")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="sampled assumption checks")
    p.add_argument("--samples", type=int, default=4096)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("close-costs", parents=[common], help="cheapest-chain costs at points")
    p.add_argument("--x", action="append", help="point, repeatable")
    p.add_argument("--t", type=float, default=0.0)
    p.set_defaults(func=cmd_close_costs)

    p = sub.add_parser("quadrature-report", parents=[common], help="jump quadrature nodes and weights")
    p.add_argument("--qtol", type=float, default=1e-6)
    p.set_defaults(func=cmd_quadrature)

    p = sub.add_parser("barrier", parents=[common, anchor], help="barrier values on a time slice")
    p.add_argument("--c", type=float, help="barrier constant (default K*2^(p+1))")
    p.add_argument("--t", type=float, help="slice time (default s)")
    p.set_defaults(func=cmd_barrier)

    p = sub.add_parser("calibrate", parents=[common, anchor], help="smallest admissible barrier constant")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("solve", parents=[common, solver_opts], help="solve the switching system")
    p.add_argument("--no-validate", action="store_true", help="skip the assumption checks")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("oracle", parents=[common], help="reference values")
    p.add_argument("kind", choices=["dp", "mc"])
    p.add_argument("--x0", help="starting point")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--dt-sim", type=float, default=1e-2)
    p.add_argument("--antithetic", action="store_true")
    p.add_argument("--nt-coarse", type=int, default=8)
    p.add_argument("--substeps", type=int, default=16)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify", parents=[common, solver_opts], help="estimate experiments")
    p.add_argument("kind", choices=["cd", "reg", "cmp"])
    p.add_argument("--plan", help="perturbation plan (JSON)")
    p.add_argument("--slack", type=float, default=0.05)
    p.add_argument("--cmp-tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._argv = argv
    try:
        return args.func(args)
    except (UsageError, SpecError, ExpressionError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"switchpide: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationFailure, LoopViolation, IntegrabilityError, PlanError) as exc:
        print(f"switchpide: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FieldEvaluationError, OracleError, RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"switchpide: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
