"""Problem data model and sampled checks of the structural assumptions.

A :class:`ProblemSpec` holds everything describing one switching system:
coefficients per mode, Levy measures and jump maps, switching costs and
terminal data.  It is immutable; perturbations build new instances.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .expressions import Expr, as_expr
from .grid import GridSpec, check_points
from .levy import JumpMap, LevyMeasureSpec, build_quadrature
from .switchgraph import SwitchingCostField, min_loop_value, triangle_defect

__all__ = [
    "ModeCoefficients",
    "TerminalData",
    "ProblemSpec",
    "SpecError",
    "SamplePlan",
    "AssumptionCheck",
    "ValidationReport",
    "make_sample_plan",
    "validate_assumptions",
    "evaluate_coefficients",
    "load_spec",
]

ASSUMPTIONS = ("F2", "F3", "O1", "O2", "O3", "G")


class SpecError(ValueError):
    """Malformed problem description."""


def _vector(value, n: int, name: str) -> tuple[Expr, ...]:
    if not isinstance(value, (list, tuple)):
        if n != 1:
            raise SpecError(f"{name} must be a list of {n} entries")
        value = [value]
    if len(value) != n:
        raise SpecError(f"{name} must have {n} entries, got {len(value)}")
    return tuple(as_expr(v, f"{name}[{k}]") for k, v in enumerate(value))


def _matrix(value, n: int, name: str) -> tuple[tuple[Expr, ...], ...]:
    if not isinstance(value, (list, tuple)):
        if n != 1:
            raise SpecError(f"{name} must be an {n}x{n} matrix")
        value = [[value]]
    if len(value) != n:
        raise SpecError(f"{name} must have {n} rows")
    return tuple(_vector(row, n, f"{name}[{k}]") for k, row in enumerate(value))


@dataclass(frozen=True)
class ModeCoefficients:
    """sigma (n x n), drift b (n), zeroth-order coefficient c0 and source f of one mode."""

    sigma: tuple[tuple[Expr, ...], ...]
    b: tuple[Expr, ...]
    c0: Expr
    f: Expr

    @classmethod
    def build(cls, n: int, sigma=0.0, b=0.0, c0=0.0, f=0.0, name: str = "mode") -> ModeCoefficients:
        if not isinstance(b, (list, tuple)) and n > 1:
            b = [b] * n
        if not isinstance(sigma, (list, tuple)) and n > 1:
            sigma = [[sigma if k == l else 0.0 for l in range(n)] for k in range(n)]
        return cls(
            sigma=_matrix(sigma, n, f"{name}.sigma"),
            b=_vector(b, n, f"{name}.b"),
            c0=as_expr(c0, f"{name}.c0"),
            f=as_expr(f, f"{name}.f"),
        )

    @property
    def n(self) -> int:
        return len(self.b)

    def sigma_at(self, X, t) -> np.ndarray:
        X = np.atleast_2d(X)
        n = self.n
        S = np.empty((X.shape[0], n, n))
        for k in range(n):
            for l in range(n):
                S[:, k, l] = self.sigma[k][l](X, t)
        return S

    def evaluate(self, X, t):
        """(a, b, c0, f) at points X; a = sigma sigma^T has shape (N, n, n)."""
        X = np.atleast_2d(X)
        S = self.sigma_at(X, t)
        a = np.einsum("pkj,plj->pkl", S, S)
        b = np.stack([e(X, t) for e in self.b], axis=1)
        return a, b, self.c0(X, t), self.f(X, t)

    def to_dict(self) -> dict:
        return {
            "sigma": [[e.source for e in row] for row in self.sigma],
            "b": [e.source for e in self.b],
            "c0": self.c0.source,
            "f": self.f.source,
        }


@dataclass(frozen=True)
class TerminalData:
    g: tuple[Expr, ...]

    @classmethod
    def build(cls, values) -> TerminalData:
        if not isinstance(values, (list, tuple)):
            values = [values]
        return cls(tuple(as_expr(v, f"terminal[{i}]") for i, v in enumerate(values)))

    def __call__(self, X) -> np.ndarray:
        """Shape (m, N)."""
        return np.stack([g(X, 0.0) for g in self.g])


@dataclass(frozen=True)
class ProblemSpec:
    """One system instance of the switching problem."""

    n: int
    m: int
    T: float
    p: int
    K: float
    modes: tuple[ModeCoefficients, ...]
    jumps: tuple[LevyMeasureSpec, ...]
    eta: JumpMap
    costs: SwitchingCostField
    terminal: TerminalData
    box: tuple[tuple[float, float], ...] | None = None
    nx: tuple[int, ...] | None = None
    nt: int | None = None
    name: str = field(default="problem", compare=False)

    def __post_init__(self):
        if self.n not in (1, 2):
            raise SpecError("spatial dimension n must be 1 or 2")
        if self.m < 1:
            raise SpecError("need at least one mode")
        if not self.T > 0:
            raise SpecError("horizon T must be positive")
        if int(self.p) != self.p or self.p < 2:
            raise SpecError("growth exponent p must be an integer >= 2")
        if not self.K > 0:
            raise SpecError("assumption constant K must be positive")
        if len(self.modes) != self.m or len(self.jumps) != self.m or len(self.terminal.g) != self.m:
            raise SpecError("modes, jumps and terminal must each have m entries")
        if self.costs.m != self.m or len(self.eta.eta) != self.m:
            raise SpecError("costs and jump maps must have m entries")
        for i, md in enumerate(self.modes):
            if md.n != self.n:
                raise SpecError(f"mode {i} coefficients have wrong dimension")
            if len(self.eta.eta[i]) != self.n:
                raise SpecError(f"jump map of mode {i} must have n components")

    # ------------------------------------------------------------------ I/O
    @classmethod
    def from_dict(cls, data: dict, name: str = "problem") -> ProblemSpec:
        try:
            dims = data.get("dims", data)
            n = int(dims["n"])
            m = int(dims["m"])
            T = float(dims["T"])
            p = int(data["p"])
            K = float(data["K"])
            raw_modes = data["modes"]
            raw_costs = data.get("costs", [[0.0] * m for _ in range(m)] if m == 1 else None)
            raw_term = data["terminal"]
        except KeyError as exc:
            raise SpecError(f"missing required field {exc.args[0]!r}") from None
        if raw_costs is None:
            raise SpecError("missing required field 'costs'")
        if len(raw_modes) != m:
            raise SpecError(f"expected {m} modes, got {len(raw_modes)}")
        modes = tuple(
            ModeCoefficients.build(
                n, md.get("sigma", 0.0), md.get("b", 0.0), md.get("c0", 0.0), md.get("f", 0.0), name=f"modes[{i}]"
            )
            for i, md in enumerate(raw_modes)
        )
        raw_jumps = data.get("jumps") or [{"kind": "empty"}] * m
        if len(raw_jumps) != m:
            raise SpecError(f"expected {m} jump entries, got {len(raw_jumps)}")
        jumps, etas = [], []
        default_eta = JumpMap.identity(1, n).eta[0]
        for i, jd in enumerate(raw_jumps):
            jd = dict(jd)
            eta = jd.pop("eta", None)
            etas.append(default_eta if eta is None else _vector(eta, n, f"jumps[{i}].eta"))
            try:
                jumps.append(LevyMeasureSpec(**jd))
            except TypeError as exc:
                raise SpecError(f"jumps[{i}]: {exc}") from None
        if isinstance(raw_term, (list, tuple)) and len(raw_term) != m:
            raise SpecError(f"expected {m} terminal functions")
        costs = SwitchingCostField.from_matrix(raw_costs)
        gd = data.get("grid", {})
        box = tuple(tuple(b) for b in gd["box"]) if "box" in gd else None
        nx = gd.get("nx")
        if nx is not None:
            nx = tuple(np.atleast_1d(nx).astype(int).tolist())
        return cls(
            n=n, m=m, T=T, p=p, K=K, modes=modes, jumps=tuple(jumps), eta=JumpMap(tuple(etas)),
            costs=costs, terminal=TerminalData.build(raw_term), box=box, nx=nx, nt=gd.get("nt"), name=name,
        )

    @classmethod
    def from_file(cls, path) -> ProblemSpec:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(data, name=path.stem)

    def to_dict(self) -> dict:
        d = {
            "dims": {"n": self.n, "m": self.m, "T": self.T},
            "p": self.p,
            "K": self.K,
            "modes": [md.to_dict() for md in self.modes],
            "jumps": [
                {**j.to_dict(), "eta": [e.source for e in self.eta.eta[i]]} for i, j in enumerate(self.jumps)
            ],
            "costs": self.costs.sources(),
            "terminal": [g.source for g in self.terminal.g],
        }
        if self.box is not None:
            d["grid"] = {"box": [list(b) for b in self.box]}
            if self.nx is not None:
                d["grid"]["nx"] = list(self.nx)
            if self.nt is not None:
                d["grid"]["nt"] = self.nt
        return d

    # -------------------------------------------------------------- helpers
    def grid(self, nx=None, nt=None, box=None) -> GridSpec:
        box = box or self.box
        if box is None:
            raise SpecError("no grid box given in the problem file or arguments")
        nx = nx or self.nx or 101
        nt = nt or self.nt or 101
        return GridSpec(box, nx, nt, self.T)

    def quadratures(self, tol: float = 1e-6):
        return [build_quadrature(j, tol=tol, p=self.p) for j in self.jumps]

    def with_closed_costs(self) -> ProblemSpec:
        from .switchgraph import triangle_closure

        return replace(self, costs=triangle_closure(self.costs))


def load_spec(path) -> ProblemSpec:
    return ProblemSpec.from_file(path)


def evaluate_coefficients(spec: ProblemSpec, i: int, x, t: float):
    """(a, b, c0, f) of mode i at a single point; a = sigma sigma^T."""
    if not 0 <= i < spec.m:
        raise IndexError(f"mode {i} out of range for m={spec.m}")
    if not 0 <= t <= spec.T:
        raise ValueError(f"t={t} outside [0, {spec.T}]")
    X = check_points(np.asarray(x, dtype=float).reshape(1, -1), spec.n)
    a, b, c0, f = spec.modes[i].evaluate(X, t)
    return a[0], b[0], float(c0[0]), float(f[0])


# ---------------------------------------------------------------- validation
@dataclass(frozen=True)
class SamplePlan:
    """Sample pairs (x, t), (y, t2) plus an axis step for second differences."""

    X: np.ndarray
    Y: np.ndarray
    t: np.ndarray
    t2: np.ndarray
    h: np.ndarray


def make_sample_plan(box, T: float, n_points: int = 4096, h=None) -> SamplePlan:
    """Halton samples in box x [0, T] plus all box corners.

    Half of the partners y are independent samples, half lie within 2% of the
    box width from x, so both global and local ratios are probed.
    """
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    n = box.shape[0]
    lo, hi = box[:, 0], box[:, 1]
    width = hi - lo
    sampler = qmc.Halton(d=2 * n + 2, scramble=False)
    sampler.fast_forward(1)
    U = sampler.random(n_points)
    X = lo + width * U[:, :n]
    Y = lo + width * U[:, n : 2 * n]
    near = np.arange(n_points) % 2 == 1
    Y[near] = np.clip(X[near] + 0.02 * width * (2 * U[near, n : 2 * n] - 1), lo, hi)
    t = T * U[:, 2 * n]
    t2 = np.where(near, np.clip(t + 0.02 * T * (2 * U[:, 2 * n + 1] - 1), 0, T), T * U[:, 2 * n + 1])
    corners = GridSpec(tuple(map(tuple, box)), 3, 2, T).corners()
    center = 0.5 * (lo + hi)
    Xc = np.concatenate([corners, corners])
    tc = np.concatenate([np.zeros(len(corners)), np.full(len(corners), T)])
    Yc = np.broadcast_to(center, Xc.shape)
    if h is None:
        h = width / 100.0
    return SamplePlan(
        X=np.concatenate([X, Xc]),
        Y=np.concatenate([Y, Yc]),
        t=np.concatenate([t, tc]),
        t2=np.concatenate([t2, tc[::-1]]),
        h=np.broadcast_to(np.asarray(h, dtype=float), (n,)).copy(),
    )


@dataclass
class AssumptionCheck:
    tag: str
    passed: bool
    empirical: float
    bound: float | None
    worst: dict | None = None
    detail: str = ""

    def line(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        bound = "" if self.bound is None else f" (bound {self.bound:.6g})"
        worst = "" if self.worst is None else f" worst at {self.worst}"
        return f"({self.tag}) {verdict}: empirical {self.empirical:.6g}{bound}{worst} {self.detail}".rstrip()


@dataclass
class ValidationReport:
    checks: dict[str, AssumptionCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failed(self) -> list[str]:
        return [tag for tag, c in self.checks.items() if not c.passed]

    def lines(self) -> list[str]:
        return [self.checks[t].line() for t in ASSUMPTIONS if t in self.checks]


def _worst(values: np.ndarray, X, t, largest=True) -> tuple[float, dict]:
    values = np.asarray(values, dtype=float)
    k = int(np.nanargmax(values) if largest else np.nanargmin(values))
    return float(values[k]), {"x": np.round(X[k], 12).tolist(), "t": float(np.broadcast_to(t, values.shape)[k])}


def _norm(X):
    return np.sqrt(np.sum(X * X, axis=1))


def _poly(X, power):
    r = _norm(X)
    return r**power if power > 0 else np.ones_like(r)


def _check_f2(spec: ProblemSpec, plan: SamplePlan) -> AssumptionCheck:
    X, Y, t = plan.X, plan.Y, plan.t
    dist = _norm(X - Y)
    ok = dist > 0
    p = spec.p
    best, where = -math.inf, None
    zero = np.zeros_like(X)
    for i, md in enumerate(spec.modes):
        Sx, Sy = md.sigma_at(X, t), md.sigma_at(Y, t)
        bx = np.stack([e(X, t) for e in md.b], axis=1)
        by = np.stack([e(Y, t) for e in md.b], axis=1)
        cx, cy = md.c0(X, t), md.c0(Y, t)
        fx, fy = md.f(X, t), md.f(Y, t)
        dsig = np.abs(Sx - Sy)
        db = np.abs(bx - by)
        lip = (dsig + db[:, :, None] + np.abs(cx - cy)[:, None, None]).reshape(len(X), -1).max(axis=1)
        ratio = np.where(ok, lip / np.where(ok, dist, 1), 0.0)
        fr = np.where(ok, np.abs(fx - fy) / np.where(ok, (1 + _poly(X, p - 1) + _poly(Y, p - 1)) * dist, 1), 0.0)
        S0 = md.sigma_at(zero, t)
        b0 = np.stack([e(zero, t) for e in md.b], axis=1)
        f0 = md.f(zero, t)
        growth = (np.abs(b0)[:, :, None] + np.abs(S0)).reshape(len(X), -1).max(axis=1) + np.abs(f0) - cx
        for arr in (ratio, fr, growth):
            v, w = _worst(arr, X, t)
            if v > best:
                best, where = v, {"mode": i, **w}
    return AssumptionCheck("F2", best <= spec.K, best, spec.K, where)


def _check_f3(spec: ProblemSpec, plan: SamplePlan, max_nodes: int = 64) -> AssumptionCheck:
    X, Y, t = plan.X, plan.Y, plan.t
    dist = _norm(X - Y)
    ok = dist > 0
    best, where, detail = 0.0, None, ""
    passed = True
    for i, nu in enumerate(spec.jumps):
        if nu.kind == "empty":
            continue
        integral = nu.f3_integral(spec.p)
        if not integral < spec.K:
            passed = False
            detail = f"mode {i}: moment integral {integral:.6g} not below K"
        if integral > best:
            best, where = integral, {"mode": i, "moment": True}
        if not math.isfinite(integral):
            continue
        quad = build_quadrature(nu, p=spec.p)
        Z = quad.nodes
        if len(Z) > max_nodes:
            Z = Z[np.linspace(0, len(Z) - 1, max_nodes).astype(int)]
        for z in Z:
            rz = float(np.linalg.norm(z))
            ex = spec.eta(i, X, t, z)
            ey = spec.eta(i, Y, t, z)
            lip = np.where(ok, np.abs(ex - ey).max(axis=1) / ((1 + rz) * np.where(ok, dist, 1)), 0.0)
            grow = np.abs(ex).max(axis=1) / ((1 + _norm(X)) * rz)
            for arr in (lip, grow):
                v, w = _worst(arr, X, t)
                if v > best:
                    best, where = v, {"mode": i, "z": z.tolist(), **w}
                if v > spec.K:
                    passed = False
    return AssumptionCheck("F3", passed, best, spec.K, where, detail)


def _check_o1(spec: ProblemSpec, plan: SamplePlan) -> AssumptionCheck:
    if spec.m == 1:
        return AssumptionCheck("O1", True, math.inf, None, None, "single mode: no loops")
    C = spec.costs.raw(plan.X, plan.t)
    vals, loops = min_loop_value(C)
    v, w = _worst(vals, plan.X, plan.t, largest=False)
    k = int(np.argmin(vals))
    chain = "->".join(str(j) for j in loops[k] + (loops[k][0],))
    return AssumptionCheck("O1", bool(np.all(vals > 0)), v, None, w, f"minimal loop {chain} sum {v:.6g}")


def _check_o2(spec: ProblemSpec, plan: SamplePlan) -> AssumptionCheck:
    if spec.m < 3:
        return AssumptionCheck("O2", True, math.inf, None, None, "fewer than three modes: no distinct triples")
    C = spec.costs(plan.X, plan.t)
    slack, triples = triangle_defect(C)
    v, w = _worst(slack, plan.X, plan.t, largest=False)
    k = int(np.argmin(slack))
    i, j, l = triples[k]
    note = "" if v >= 0 else f"c[{i}][{l}] > c[{i}][{j}] + c[{j}][{l}]; apply the chain closure"
    return AssumptionCheck("O2", bool(v >= 0), v, None, {**w, "triple": [int(i), int(j), int(l)]}, note)


def _check_o3(spec: ProblemSpec, plan: SamplePlan) -> AssumptionCheck:
    X, Y, t, t2 = plan.X, plan.Y, plan.t, plan.t2
    p = spec.p
    dist = np.sqrt(_norm(X - Y) ** 2 + (t - t2) ** 2)
    ok = dist > 0
    best, where = 0.0, None
    for i in range(spec.m):
        for j in range(spec.m):
            if i == j:
                continue
            c = spec.costs.c[i][j]
            cx, cy = c(X, t), c(Y, t2)
            lip = np.where(ok, np.abs(cx - cy) / ((1 + _poly(X, p - 1) + _poly(Y, p - 1)) * np.where(ok, dist, 1)), 0.0)
            arrays = [lip]
            for k in range(spec.n):
                e = np.zeros(spec.n)
                e[k] = plan.h[k]
                d2 = c(X + e, t) + c(X - e, t) - 2 * cx
                arrays.append(d2 / ((1 + _poly(X, p - 2)) * plan.h[k] ** 2))
            for arr in arrays:
                v, w = _worst(arr, X, t)
                if v > best:
                    best, where = v, {"pair": [i, j], **w}
    return AssumptionCheck("O3", best <= spec.K, best, spec.K, where)


def _check_g(spec: ProblemSpec, plan: SamplePlan) -> AssumptionCheck:
    X, Y = plan.X, plan.Y
    p = spec.p
    dist = _norm(X - Y)
    ok = dist > 0
    gx, gy = spec.terminal(X), spec.terminal(Y)
    best, where = 0.0, None
    for i in range(spec.m):
        ratio = np.where(ok, np.abs(gx[i] - gy[i]) / ((1 + _poly(X, p - 1) + _poly(Y, p - 1)) * np.where(ok, dist, 1)), 0.0)
        v, w = _worst(ratio, X, plan.t)
        if v > best:
            best, where = v, {"mode": i, **w}
    passed = best <= spec.K
    detail = ""
    if spec.m > 1:
        C = spec.costs.raw(X, spec.T)
        margins = []
        for i in range(spec.m):
            obs = max(gx[j] - C[:, i, j] for j in range(spec.m) if j != i)
            margins.append(gx[i] - obs)
        margins = np.stack(margins)
        worst_margin = float(margins.min())
        if worst_margin < 0:
            passed = False
            i, k = np.unravel_index(int(np.argmin(margins)), margins.shape)
            frac = float(np.mean(margins.min(axis=0) < 0))
            detail = (
                f"obstacle consistency fails for mode {i} at x={X[k].round(12).tolist()} "
                f"(margin {worst_margin:.6g}, {100 * frac:.1f}% of samples)"
            )
        else:
            detail = f"obstacle consistency margin {worst_margin:.6g}"
    return AssumptionCheck("G", passed, best, spec.K, where, detail)


def validate_assumptions(spec: ProblemSpec, samples: SamplePlan | None = None, box=None) -> ValidationReport:
    """Sampled necessary-condition checks of (F2), (F3), (O1), (O2), (O3) and (G).

    Each check reports the smallest constant making its inequality hold on the
    samples and compares it with ``spec.K``.  Field evaluation failures raise
    :class:`~switchpide.expressions.FieldEvaluationError` naming the field and point.
    """
    if samples is None:
        box = box or spec.box
        if box is None:
            raise SpecError("validation needs a sample box")
        samples = make_sample_plan(box, spec.T)
    checks = {
        "F2": _check_f2(spec, samples),
        "F3": _check_f3(spec, samples),
        "O1": _check_o1(spec, samples),
        "O2": _check_o2(spec, samples),
        "O3": _check_o3(spec, samples),
        "G": _check_g(spec, samples),
    }
    return ValidationReport(checks)
