"""Experiments comparing pairs of solves: continuous dependence, comparison, regularity."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .expressions import as_expr
from .levy import LevyMeasureSpec, _gauss_panels, build_quadrature
from .model import ProblemSpec, SpecError, make_sample_plan, validate_assumptions
from .solver import SolverConfig, SolveResult, solve

__all__ = [
    "PerturbationPlan",
    "PlanError",
    "apply_plan",
    "data_differences",
    "jump_differences",
    "ContinuousDependenceReport",
    "ComparisonReport",
    "RegularityReport",
    "continuous_dependence_experiment",
    "comparison_experiment",
    "regularity_experiment",
    "lipschitz_constant",
    "holder_slope",
]

FIELDS = ("sigma", "b", "c0", "f", "g", "costs", "eta", "nu")


class PlanError(ValueError):
    """Malformed perturbation plan or a perturbed problem that fails validation."""


@dataclass(frozen=True)
class PerturbationPlan:
    """Perturbed data = original + magnitude * direction, field by field.

    ``directions`` maps a field name to its direction in the problem-file
    layout: per-mode lists for sigma, b, c0, f, g and eta, an m x m matrix
    for costs, and per-mode scale factors for nu (the measure becomes
    (1 + magnitude * factor) * nu).  A single expression for a per-mode field
    applies to every mode.
    """

    magnitude: float
    directions: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.directions) - set(FIELDS)
        if unknown:
            raise PlanError(f"unknown perturbation field(s) {sorted(unknown)}; allowed {FIELDS}")
        if not math.isfinite(self.magnitude):
            raise PlanError("perturbation magnitude must be finite")

    @property
    def which(self) -> tuple[str, ...]:
        return tuple(k for k in FIELDS if k in self.directions)

    @classmethod
    def from_dict(cls, data: dict) -> PerturbationPlan:
        try:
            return cls(float(data["magnitude"]), dict(data.get("directions", {})))
        except KeyError:
            raise PlanError("perturbation plan needs a 'magnitude'") from None

    @classmethod
    def from_file(cls, path) -> PerturbationPlan:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"magnitude": self.magnitude, "directions": self.directions}


def _per_mode(value, m: int) -> list:
    # a list of length m (m > 1) gives one direction per mode
    if m > 1 and isinstance(value, (list, tuple)) and len(value) == m:
        return list(value)
    return [value] * m


def _add(src, direction, eps):
    if isinstance(direction, (list, tuple)) and len(direction) == 1:
        direction = direction[0]
    return as_expr(src).combine(direction, eps).source


def _add_nested(src, direction, eps):
    if isinstance(src, (list, tuple)):
        if not isinstance(direction, (list, tuple)):
            direction = [direction] * len(src)
        return [_add_nested(s, d, eps) for s, d in zip(src, direction)]
    return _add(src, direction, eps)


def apply_plan(spec: ProblemSpec, plan: PerturbationPlan) -> ProblemSpec:
    """The perturbed problem as a new instance."""
    d = spec.to_dict()
    eps = plan.magnitude
    m = spec.m
    dirs = plan.directions
    for key in ("sigma", "b", "c0", "f"):
        if key in dirs:
            per = _per_mode(dirs[key], m)
            for i in range(m):
                d["modes"][i][key] = _add_nested(d["modes"][i][key], per[i], eps)
    if "g" in dirs:
        per = _per_mode(dirs["g"], m)
        d["terminal"] = [_add(d["terminal"][i], per[i], eps) for i in range(m)]
    if "costs" in dirs:
        C = dirs["costs"]
        d["costs"] = [
            [d["costs"][i][j] if i == j else _add(d["costs"][i][j], C[i][j] if isinstance(C, list) else C, eps) for j in range(m)]
            for i in range(m)
        ]
    if "eta" in dirs:
        per = _per_mode(dirs["eta"], m)
        for i in range(m):
            d["jumps"][i]["eta"] = _add_nested(d["jumps"][i]["eta"], per[i], eps)
    if "nu" in dirs:
        per = _per_mode(dirs["nu"], m)
        jumps = []
        for i, nu in enumerate(spec.jumps):
            factor = 1.0 + eps * float(np.ravel(per[i])[0])
            if not factor > 0:
                raise PlanError(f"nu perturbation makes the measure of mode {i} non-positive")
            jd = nu.scaled(factor).to_dict()
            jd["eta"] = d["jumps"][i]["eta"]
            jumps.append(jd)
        d["jumps"] = jumps
    try:
        return ProblemSpec.from_dict(d, name=f"{spec.name}+perturbed")
    except (SpecError, ValueError) as exc:
        raise PlanError(f"perturbed problem is malformed: {exc}") from None


# ------------------------------------------------------------ data distances
def _sup(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.max(np.abs(a))) if a.size else 0.0


def _common_nodes(nu: LevyMeasureSpec, nuh: LevyMeasureSpec, p: int):
    """Shared jump nodes with the weights of both measures there."""
    q1 = build_quadrature(nu, p=p)
    q2 = build_quadrature(nuh, p=p)
    point_nodes, w1, w2 = [], [], []

    def add_atoms(nodes, weights, which):
        for z, w in zip(nodes, weights):
            for k, z0 in enumerate(point_nodes):
                if np.array_equal(z0, z):
                    (w1 if which == 1 else w2)[k] += w
                    break
            else:
                point_nodes.append(np.asarray(z, dtype=float))
                w1.append(w if which == 1 else 0.0)
                w2.append(w if which == 2 else 0.0)

    for meas, q, which in ((nu, q1, 1), (nuh, q2, 2)):
        if meas.kind == "finite-atoms":
            add_atoms(q.nodes, q.weights, which)
        elif meas.is_continuous:
            add_atoms(q.small_nodes, q.small_weights, which)
    cont = [meas for meas in (nu, nuh) if meas.is_continuous]
    nodes = [np.array(point_nodes).reshape(-1, nu.ell)] if point_nodes else []
    W1 = [np.array(w1)] if point_nodes else []
    W2 = [np.array(w2)] if point_nodes else []
    if cont:
        kappa = min(meas.kappa for meas in cont)
        zmax = max(q.zmax for q in (q1, q2))
        panels = max(q.panels for q in (q1, q2)) or 16
        edges = [kappa * (1 / kappa) ** (np.arange(panels + 1) / panels)]
        if zmax > 1:
            edges.append(zmax ** (np.arange(panels + 1) / panels))
        for side in (1.0, -1.0):
            for e in edges:
                r, w = _gauss_panels(e, 8)
                z = side * r
                nodes.append(z.reshape(-1, 1))
                W1.append(w * nu.density(z) if nu.is_continuous else np.zeros_like(w))
                W2.append(w * nuh.density(z) if nuh.is_continuous else np.zeros_like(w))
    if not nodes:
        return np.zeros((0, nu.ell)), np.zeros(0), np.zeros(0)
    return np.concatenate(nodes), np.concatenate(W1), np.concatenate(W2)


def jump_differences(spec: ProblemSpec, other: ProblemSpec, X, times) -> tuple[float, float]:
    """sup over samples and modes of the two jump-difference terms (square roots taken).

    (int |eta_bar|^2 |nu - nu_hat|(dz))^(1/2) and (int |eta - eta_hat|^2 nu_bar(dz))^(1/2)
    with |eta_bar| = max(|eta|, |eta_hat|) and nu_bar = max(nu, nu_hat).
    """
    t1 = t2 = 0.0
    for i in range(spec.m):
        Z, w, wh = _common_nodes(spec.jumps[i], other.jumps[i], spec.p)
        if not len(w):
            continue
        dw = np.abs(w - wh)
        wbar = np.maximum(w, wh)
        for t in times:
            a1 = np.zeros(X.shape[0])
            a2 = np.zeros(X.shape[0])
            for z, d1, d2 in zip(Z, dw, wbar):
                e = spec.eta(i, X, t, z)
                eh = other.eta(i, X, t, z)
                ebar = np.maximum(np.linalg.norm(e, axis=1), np.linalg.norm(eh, axis=1))
                a1 += ebar**2 * d1
                a2 += np.sum((e - eh) ** 2, axis=1) * d2
            t1 = max(t1, math.sqrt(float(a1.max())))
            t2 = max(t2, math.sqrt(float(a2.max())))
    return t1, t2


def data_differences(spec: ProblemSpec, other: ProblemSpec, X, times) -> dict:
    """Sup-norm data differences over sample points X and times."""
    out = {k: 0.0 for k in ("g", "f", "c0", "b", "sigma", "costs")}
    out["g"] = _sup(spec.terminal(X) - other.terminal(X))
    for t in times:
        for i in range(spec.m):
            a = spec.modes[i]
            ah = other.modes[i]
            out["f"] = max(out["f"], _sup(a.f(X, t) - ah.f(X, t)))
            out["c0"] = max(out["c0"], _sup(a.c0(X, t) - ah.c0(X, t)))
            out["b"] = max(out["b"], max(_sup(e(X, t) - eh(X, t)) for e, eh in zip(a.b, ah.b)))
            S, Sh = a.sigma_at(X, t), ah.sigma_at(X, t)
            out["sigma"] = max(out["sigma"], _sup(np.sqrt(np.sum((S - Sh) ** 2, axis=(1, 2)))))
        if spec.m > 1:
            out["costs"] = max(out["costs"], _sup(spec.costs.raw(X, t) - other.costs.raw(X, t)))
    out["jump_measure"], out["jump_map"] = jump_differences(spec, other, X, times)
    return out


# ---------------------------------------------------------------- experiments
@dataclass
class ContinuousDependenceReport:
    sup_diff: float
    sup_u_minus_uhat: float
    sup_uhat_minus_u: float
    differences: dict
    sharp_bound: float
    c_terms: float
    implied_C: float | None
    sharp_only: bool
    sharp_gap: float | None
    worst: dict
    grid: dict
    which: tuple

    def line(self) -> str:
        implied = "n/a" if self.implied_C is None else f"{self.implied_C:.6g}"
        return (
            f"continuous dependence: sup|u-uhat| {self.sup_diff:.17g}; sharp part {self.sharp_bound:.17g}; "
            f"C-terms {self.c_terms:.6g}; implied C {implied}"
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _validate_perturbed(spec: ProblemSpec, box, n_points: int = 1024):
    rep = validate_assumptions(spec, make_sample_plan(box, spec.T, n_points=n_points))
    if not rep.passed:
        raise PlanError("perturbed problem fails validation: " + "; ".join(rep.checks[t].line() for t in rep.failed()))


def _solve_pair(spec, plan, cfg, validate):
    cfg = cfg or SolverConfig()
    grid = cfg.grid or spec.grid()
    cfg = replace(cfg, grid=grid)
    other = apply_plan(spec, plan)
    if validate:
        _validate_perturbed(other, grid.box)
    return other, solve(spec, cfg), solve(other, cfg)


def continuous_dependence_experiment(
    spec: ProblemSpec, plan: PerturbationPlan, cfg: SolverConfig | None = None, validate: bool = True
) -> ContinuousDependenceReport:
    """Solve both problems on one grid and compare the gap with the estimate.

    The estimate is max|g - g_hat| + T max|f - f_hat| + C * (zeroth-order,
    drift, diffusion and jump differences); the implied C is the smallest
    value consistent with the observed gap.
    """
    other, res, res_h = _solve_pair(spec, plan, cfg, validate)
    grid = res.grid
    X = grid.points()
    times = grid.times()
    diff = res.u.values - res_h.u.values
    sample_times = times[np.unique(np.linspace(0, grid.nt - 1, min(grid.nt, 21)).astype(int))]
    d = data_differences(spec, other, X, sample_times)
    sharp = d["g"] + spec.T * d["f"]
    c_terms = d["c0"] + d["b"] + d["sigma"] + d["jump_measure"] + d["jump_map"]
    sup_abs = float(np.max(np.abs(diff)))
    excess = max(sup_abs - sharp, 0.0)
    implied = excess / c_terms if c_terms > 0 else None
    idx = np.unravel_index(int(np.argmax(np.abs(diff))), diff.shape)
    flat = np.ravel_multi_index(idx[2:], grid.nx) if grid.n > 1 else idx[2]
    sharp_only = c_terms == 0 and d["costs"] == 0
    return ContinuousDependenceReport(
        sup_diff=sup_abs,
        sup_u_minus_uhat=float(diff.max()),
        sup_uhat_minus_u=float((-diff).max()),
        differences=d,
        sharp_bound=sharp,
        c_terms=c_terms,
        implied_C=implied,
        sharp_only=sharp_only,
        sharp_gap=(sup_abs - sharp) if sharp_only else None,
        worst={"mode": int(idx[0]), "t": float(times[idx[1]]), "x": X[flat].tolist()},
        grid=res.diagnostics["grid"],
        which=plan.which,
    )


@dataclass
class ComparisonReport:
    passed: bool
    worst_violation: float
    tol: float
    worst: dict | None
    max_residuals: tuple[float, float]

    def line(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return f"comparison {verdict}: worst violation max(u - uhat) = {self.worst_violation:.6g} (tol {self.tol:.3g})"

    def to_dict(self) -> dict:
        return asdict(self)


def comparison_experiment(
    spec: ProblemSpec, plan: PerturbationPlan, cfg: SolverConfig | None = None, tol: float = 1e-8, validate: bool = True
) -> ComparisonReport:
    """Check u_hat >= u - tol at every node for an ordered perturbation of g and f."""
    bad = set(plan.which) - {"g", "f"}
    if bad:
        raise PlanError(f"ordered perturbations may only change g and f, not {sorted(bad)}")
    other, res, res_h = _solve_pair(spec, plan, cfg, validate)
    grid = res.grid
    X = grid.points()
    if np.any(other.terminal(X) < spec.terminal(X)):
        raise PlanError("perturbation is not ordered: g_hat < g somewhere")
    for t in grid.times():
        for i in range(spec.m):
            if np.any(other.modes[i].f(X, t) < spec.modes[i].f(X, t)):
                raise PlanError(f"perturbation is not ordered: f_hat < f for mode {i}")
    viol = res.u.values - res_h.u.values
    worst = float(max(viol.max(), 0.0))
    where = None
    if worst > 0:
        idx = np.unravel_index(int(np.argmax(viol)), viol.shape)
        where = {"mode": int(idx[0]), "time_index": int(idx[1]), "node": [int(v) for v in idx[2:]]}
    return ComparisonReport(worst <= tol, worst, tol, where, (res.max_residual(), res_h.max_residual()))


@dataclass
class RegularityReport:
    lipschitz: list
    gaps: list
    increments: list
    slope: float
    passed: bool
    slack: float
    fit_slopes: list = field(default_factory=list)

    def line(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        lips = ", ".join(f"{v:.6g}" for v in self.lipschitz)
        return f"regularity {verdict}: time slope {self.slope:.4f} (need >= {0.5 - self.slack:.2f}); Lipschitz constants [{lips}]"

    def to_dict(self) -> dict:
        return asdict(self)


def _pairs(grid, max_nodes: int):
    N = grid.size
    stride = max(1, int(math.ceil(N / max_nodes)))
    sub = np.arange(0, N, stride)
    a, b = np.triu_indices(sub.size, k=1)
    pa, pb = [sub[a]], [sub[b]]
    # every nearest-neighbour pair along each axis
    idx = grid.multi_index()
    strides = np.cumprod((1,) + grid.nx[::-1])[:-1][::-1]
    for k in range(grid.n):
        ok = idx[:, k] < grid.nx[k] - 1
        nodes = np.nonzero(ok)[0]
        pa.append(nodes)
        pb.append(nodes + strides[k])
    return np.concatenate(pa), np.concatenate(pb)


def lipschitz_constant(result: SolveResult, max_nodes: int = 400) -> list[float]:
    """Per mode: sup |u(x,t) - u(y,t)| / ((1 + |x|^(p-1) + |y|^(p-1)) |x - y|) over node pairs."""
    grid = result.grid
    p = result.spec.p
    X = grid.points()
    a, b = _pairs(grid, max_nodes)
    dist = np.linalg.norm(X[a] - X[b], axis=1)
    ra = np.linalg.norm(X[a], axis=1)
    rb = np.linalg.norm(X[b], axis=1)
    weight = (1 + ra ** (p - 1) + rb ** (p - 1)) * dist
    U = result.u.flat()
    return [float(np.max(np.abs(U[i][:, a] - U[i][:, b]) / weight)) for i in range(U.shape[0])]


def holder_slope(result: SolveResult):
    """Dyadic time gaps, weighted sup increments and the least-squares log-log slope."""
    grid = result.grid
    p = result.spec.p
    X = grid.points()
    weight = 1 + np.linalg.norm(X, axis=1) ** p
    U = result.u.flat()
    nt = grid.nt
    gaps, incs = [], []
    step = 1
    while step <= (nt - 1) // 2:
        d = np.abs(U[:, step:, :] - U[:, :-step, :]) / weight
        gaps.append(step * grid.dt)
        incs.append(float(d.max()))
        step *= 2
    if len(gaps) < 4:
        raise ValueError(f"only {len(gaps)} dyadic time gaps available; need at least 4 (use more time levels)")
    lg, li = np.log(gaps), np.log(np.maximum(incs, 1e-300))
    if max(incs) <= 1e-14:
        return gaps, incs, math.inf, []
    slope = float(np.polyfit(lg, li, 1)[0])
    local = [float(v) for v in np.diff(li) / np.diff(lg)]
    return gaps, incs, slope, local


def regularity_experiment(spec_or_result, cfg: SolverConfig | None = None, slack: float = 0.05) -> RegularityReport:
    """Empirical spatial Lipschitz constants and the time-increment exponent."""
    result = spec_or_result if isinstance(spec_or_result, SolveResult) else solve(spec_or_result, cfg)
    lips = lipschitz_constant(result)
    gaps, incs, slope, local = holder_slope(result)
    return RegularityReport(lips, gaps, incs, slope, bool(slope >= 0.5 - slack), slack, local)
