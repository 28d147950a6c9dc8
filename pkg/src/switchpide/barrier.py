"""Explicit upper and lower barrier families and their numerical verification.

For an anchor (i, y, s), scale lam >= 1 and constant c > 0 let

    G(x, t) = c lam exp(c (s - t)) {A c (s - t) + A/lam^2 + B|x - y|^2 + |x - y|^p},
    A = 1 + |y|^p,  B = 1 + |y|^(p-2).

The upper family is psi_j = G + h_i(y) + c_ij(x, t) and the lower family
psi_j = -G + h_j(y).  The checks below evaluate the terminal inequality, the
obstacle inequality and the sign of the equation residual at sample nodes;
the cost part of the residual is bounded with the one-sided derivative
bounds on the costs, everything else is evaluated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import check_points
from .model import ProblemSpec
from .switchgraph import SwitchingCostField

__all__ = [
    "BarrierParams",
    "BarrierDomainError",
    "CalibrationError",
    "smooth_part",
    "upper_barrier",
    "lower_barrier",
    "upper_residual",
    "lower_residual",
    "TerminalDominanceReport",
    "ObstacleDominanceReport",
    "CalibrationReport",
    "EnvelopeReport",
    "verify_terminal_dominance",
    "verify_obstacle_dominance",
    "calibrate_c",
    "check_envelope",
    "time_gap",
    "time_gap_bound",
    "barrier_boundary",
]

C_CAP = 2.0**64


class BarrierDomainError(ValueError):
    """Barrier evaluated after its anchor time."""


class CalibrationError(RuntimeError):
    """No admissible barrier constant below the search cap."""


@dataclass(frozen=True)
class BarrierParams:
    """Anchor data of one barrier family.

    ``h`` maps points (N, n) to anchor values (m, N); a
    :class:`~switchpide.model.TerminalData` works directly.
    """

    c: float
    lam: float
    y: np.ndarray
    s: float
    i: int
    h: object = field(repr=False)
    p: int = 2

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float)).ravel()
        object.__setattr__(self, "y", y)
        if not self.c > 0:
            raise ValueError("barrier constant c must be positive")
        if not self.lam >= 1:
            raise ValueError("scale lam must be at least 1")
        if int(self.p) != self.p or self.p < 2:
            raise ValueError("growth exponent p must be an integer >= 2")

    @property
    def A(self) -> float:
        return 1.0 + float(np.linalg.norm(self.y)) ** self.p

    @property
    def B(self) -> float:
        return 1.0 + float(np.linalg.norm(self.y)) ** (self.p - 2)

    def with_c(self, c: float) -> BarrierParams:
        return replace(self, c=float(c))

    def anchor_values(self) -> np.ndarray:
        """h(y), shape (m,)."""
        return np.asarray(self.h(self.y[None, :]), dtype=float)[:, 0]


def _tau(params: BarrierParams, t, npts: int) -> np.ndarray:
    t = np.broadcast_to(np.asarray(t, dtype=float), (npts,))
    if np.any(t > params.s + 1e-12):
        raise BarrierDomainError(f"barrier anchored at s={params.s} evaluated at t={float(t.max())} > s")
    return np.maximum(params.s - t, 0.0)


def _quad_form(params: BarrierParams, X: np.ndarray, tau: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(X - params.y, axis=1)
    A, B, lam, c = params.A, params.B, params.lam, params.c
    return A * c * tau + A / lam**2 + B * r**2 + r**params.p


def smooth_part(params: BarrierParams, x, t) -> np.ndarray:
    """G(x, t) at points x (N, n) and times t <= s."""
    X = check_points(x, params.y.size)
    tau = _tau(params, t, X.shape[0])
    with np.errstate(over="ignore"):
        return params.c * params.lam * np.exp(params.c * tau) * _quad_form(params, X, tau)


def upper_barrier(params: BarrierParams, costs: SwitchingCostField, j: int, x, t) -> np.ndarray:
    """psi_j = G + h_i(y) + c_ij(x, t)."""
    X = check_points(x, params.y.size)
    t_arr = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
    G = smooth_part(params, X, t_arr)
    hy = params.anchor_values()[params.i]
    cost = 0.0 if j == params.i else costs.entry(params.i, j, X, t_arr)
    return G + hy + cost


def lower_barrier(params: BarrierParams, j: int, x, t) -> np.ndarray:
    """psi_j = -G + h_j(y); no cost term."""
    return -smooth_part(params, x, t) + params.anchor_values()[j]


def time_gap(params: BarrierParams, t: float) -> float:
    """upper_barrier(y, t, i) - h_i(y) = c lam e^{c tau}(A c tau + A/lam^2)."""
    tau = params.s - t
    return params.c * params.lam * math.exp(params.c * tau) * (params.A * params.c * tau + params.A / params.lam**2)


def time_gap_bound(params: BarrierParams, t: float) -> float:
    """2 c^2 e^{c tau} A tau^(1/2), reached by lam = tau^(-1/2) when c >= 1."""
    tau = params.s - t
    return 2 * params.c**2 * math.exp(params.c * tau) * params.A * math.sqrt(tau)


# ------------------------------------------------------------------ residuals
def _derivatives(params: BarrierParams, X: np.ndarray, tau: np.ndarray):
    """G, dG/dtau, DG and the pieces of D^2 G at X."""
    c, lam, A, B, p = params.c, params.lam, params.A, params.B, params.p
    d = X - params.y
    r = np.linalg.norm(d, axis=1)
    with np.errstate(over="ignore"):
        scale = c * lam * np.exp(c * tau)
    Q = _quad_form(params, X, tau)
    G = scale * Q
    dtau = c * G + scale * A * c
    radial = 2 * B + p * r ** (p - 2)
    DG = (scale * radial)[:, None] * d
    # D^2 G = scale * (radial I + p (p-2) r^(p-2) u u^T), u = d/|d|
    unit = np.divide(d, r[:, None], out=np.zeros_like(d), where=r[:, None] > 0)
    curv = p * (p - 2) * r ** (p - 2) if p > 2 else np.zeros_like(r)
    return G, dtau, DG, scale, radial, curv, unit


def _trace_a_hess(a, scale, radial, curv, unit):
    tra = np.trace(a, axis1=1, axis2=2)
    quad = np.einsum("pk,pkl,pl->p", unit, a, unit)
    return scale * (radial * tra + curv * quad)


def _cost_constant(spec: ProblemSpec, costs: SwitchingCostField, i: int, j: int) -> float:
    """Bound on first derivatives and one-sided second derivatives of c_ij.

    Zero for constant costs; closed costs may chain up to m-1 raw costs.
    """
    if i == j or costs.is_constant(i, j):
        return 0.0
    return spec.K * (spec.m - 1 if costs.closed else 1)


def _nonlocal_terms(spec, quad, j, params, X, t, DG, value_fn):
    """sum_q w_q [v(x+eta) - v(x) - 1_inner <eta, DG>] and sum_inner w_q |eta|_1."""
    N = X.shape[0]
    if quad.size == 0:
        return np.zeros(N), np.zeros(N)
    E = np.stack([spec.eta(j, X, t, zq) for zq in quad.nodes])  # (Q, N, n)
    # one batched evaluation over every jump target
    shifted = value_fn((X[None] + E).reshape(-1, X.shape[1])).reshape(quad.size, N)
    incr = shifted - value_fn(X)[None]
    incr -= quad.inner[:, None] * np.einsum("qpk,pk->qp", E, DG)
    w = quad.weights[:, None]
    inner_mass = np.sum((w * quad.inner[:, None]) * np.abs(E).sum(axis=2), axis=0)
    return np.sum(w * incr, axis=0), inner_mass


def upper_residual(spec: ProblemSpec, params: BarrierParams, j: int, X, t: float, quads=None) -> np.ndarray:
    """Lower bound on -d_t psi_j - L_j psi_j - J_j psi_j - f_j at nodes X, time t."""
    X = check_points(X, spec.n)
    quads = quads or spec.quadratures()
    costs = spec.costs
    tau = _tau(params, t, X.shape[0])
    G, dtau, DG, scale, radial, curv, unit = _derivatives(params, X, tau)
    a, b, c0, f = spec.modes[j].evaluate(X, t)
    acorr = quads[j].diffusion_correction(spec.eta, j, X, t)
    atot = a + acorr
    Kc = _cost_constant(spec, costs, params.i, j)
    p = spec.p
    rx = np.linalg.norm(X, axis=1)
    lip = Kc * (1 + 2 * rx ** (p - 1))
    semi = Kc * (1 + rx ** (p - 2))
    psi = upper_barrier(params, costs, j, X, t)

    def value(Y):
        return upper_barrier(params, costs, j, Y, t)

    jump, inner_mass = _nonlocal_terms(spec, quads[j], j, params, X, t, DG, value)
    R = dtau - lip
    R -= _trace_a_hess(atot, scale, radial, curv, unit) + semi * np.trace(atot, axis1=1, axis2=2)
    R -= np.sum(b * DG, axis=1) + lip * np.sum(np.abs(b), axis=1)
    R += c0 * psi
    R -= jump + lip * inner_mass
    return R - f


def lower_residual(spec: ProblemSpec, params: BarrierParams, j: int, X, t: float, quads=None) -> np.ndarray:
    """-d_t psi_j - L_j psi_j - J_j psi_j - f_j for the lower family (exact)."""
    X = check_points(X, spec.n)
    quads = quads or spec.quadratures()
    tau = _tau(params, t, X.shape[0])
    G, dtau, DG, scale, radial, curv, unit = _derivatives(params, X, tau)
    a, b, c0, f = spec.modes[j].evaluate(X, t)
    atot = a + quads[j].diffusion_correction(spec.eta, j, X, t)
    psi = -G + params.anchor_values()[j]

    def value(Y):
        return smooth_part(params, Y, t)

    jump, _ = _nonlocal_terms(spec, quads[j], j, params, X, t, DG, value)
    R = -dtau + _trace_a_hess(atot, scale, radial, curv, unit) + np.sum(b * DG, axis=1) + c0 * psi + jump
    return R - f


# -------------------------------------------------------------------- reports
@dataclass
class TerminalDominanceReport:
    passed: bool
    margin: float
    worst: dict | None
    c_min: float
    lower_margin: float
    terminal_floor: float

    def line(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (
            f"terminal dominance {verdict}: margin {self.margin:.6g}, lower margin {self.lower_margin:.6g}, "
            f"minimal passing c {self.c_min:.6g} (floor K*2^(p+1) = {self.terminal_floor:.6g})"
        )


def _terminal_margins(params, costs, h_vals, X):
    m = h_vals.shape[0]
    up = np.stack([upper_barrier(params, costs, j, X, params.s) - h_vals[j] for j in range(m)])
    lo = np.stack([h_vals[j] - lower_barrier(params, j, X, params.s) for j in range(m)])
    return up, lo


def verify_terminal_dominance(params: BarrierParams, costs: SwitchingCostField, terminal, samples, K: float | None = None):
    """Check psi_j(x, s) >= h_j(x) >= lower psi_j(x, s) at the samples.

    ``terminal`` maps points to (m, N) values (usually ``params.h``).  The
    minimal passing c for the upper family is located by bisection.
    """
    X = check_points(samples, params.y.size)
    h_vals = np.asarray(terminal(X), dtype=float)
    up, lo = _terminal_margins(params, costs, h_vals, X)
    j, k = np.unravel_index(int(np.argmin(up)), up.shape)
    margin = float(up[j, k])

    def upper_ok(c):
        u, _ = _terminal_margins(params.with_c(c), costs, h_vals, X)
        return bool(np.all(u >= 0))

    tiny = 1e-300
    if upper_ok(tiny):
        c_min = 0.0
    else:
        hi = params.c
        while not upper_ok(hi):
            hi *= 2.0
            if hi > C_CAP:
                hi = math.inf
                break
        c_min = hi
        if math.isfinite(hi):
            lo_c = 0.0
            for _ in range(80):
                mid = 0.5 * (lo_c + hi)
                if upper_ok(mid):
                    hi = mid
                else:
                    lo_c = mid
            c_min = hi
    floor = math.nan if K is None else K * 2.0 ** (params.p + 1)
    return TerminalDominanceReport(
        passed=bool(margin >= 0 and np.all(lo >= 0)),
        margin=margin,
        worst={"mode": int(j), "x": X[k].tolist()},
        c_min=float(c_min),
        lower_margin=float(lo.min()),
        terminal_floor=floor,
    )


@dataclass
class ObstacleDominanceReport:
    passed: bool
    min_gap: float
    identity_error: float
    triple: tuple[int, int, int] | None
    worst: dict | None

    def line(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        where = "" if self.triple is None else f" worst triple (i,j,k)={self.triple}"
        return f"obstacle dominance {verdict}: min gap {self.min_gap:.6g}, identity error {self.identity_error:.3g}{where}"


def verify_obstacle_dominance(params: BarrierParams, costs: SwitchingCostField, samples, t) -> ObstacleDominanceReport:
    """Check psi_j - max_{k != j}(psi_k - c_jk) >= 0 for the upper family.

    The gap equals min_k (c_ij + c_jk - c_ik); the difference between the gap
    computed from barrier values and from the costs is reported as the
    identity error.
    """
    X = check_points(samples, params.y.size)
    m = costs.m
    if m == 1:
        return ObstacleDominanceReport(True, math.inf, 0.0, None, None)
    t_arr = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
    C = costs(X, t_arr)
    i = params.i
    psi = np.stack([upper_barrier(params, costs, j, X, t_arr) for j in range(m)])
    best_gap, best, ident = math.inf, None, 0.0
    for j in range(m):
        others = [k for k in range(m) if k != j]
        from_values = psi[j] - np.max(np.stack([psi[k] - C[:, j, k] for k in others]), axis=0)
        expr = np.stack([(C[:, i, j] + C[:, j, k]) - C[:, i, k] for k in others])
        from_costs = expr.min(axis=0)
        scale = 1.0 + np.abs(psi).max(axis=0)
        ident = max(ident, float(np.max(np.abs(from_values - from_costs) / scale)))
        q = int(np.argmin(from_costs))
        if from_costs[q] < best_gap:
            k = others[int(np.argmin(expr[:, q]))]
            best_gap = float(from_costs[q])
            best = (i, j, k, q)
    i_, j_, k_, q = best
    return ObstacleDominanceReport(
        passed=best_gap >= 0,
        min_gap=best_gap,
        identity_error=ident,
        triple=(i_, j_, k_),
        worst={"x": X[q].tolist(), "t": float(t_arr[q])},
    )


@dataclass
class CalibrationReport:
    c_star: float
    worst_residual: float
    worst_node: dict
    terminal_floor: float
    evaluations: int
    history: list = field(default_factory=list, repr=False)

    def line(self) -> str:
        return (
            f"c* = {self.c_star:.17g} (floor {self.terminal_floor:.6g}); worst residual {self.worst_residual:.6g} "
            f"at {self.worst_node} after {self.evaluations} evaluations"
        )


def _residual_margin(spec, params, X, times, quads, h_vals):
    """Smallest signed margin over all checks; >= 0 means the barrier pair is admissible."""
    worst, node = math.inf, None
    with np.errstate(over="ignore", invalid="ignore"):
        up, lo = _terminal_margins(params, spec.costs, h_vals, X)
        for arr, kind in ((up, "terminal-upper"), (lo, "terminal-lower")):
            v = float(np.nanmin(arr)) if np.all(np.isfinite(arr)) else -math.inf
            if v < worst:
                worst, node = v, {"check": kind}
        for t in times:
            for j in range(spec.m):
                for sign, fn, kind in ((1.0, upper_residual, "upper"), (-1.0, lower_residual, "lower")):
                    r = sign * fn(spec, params, j, X, t, quads)
                    if not np.all(np.isfinite(r)):
                        return -math.inf, {"check": kind, "mode": j, "t": float(t), "overflow": True}
                    k = int(np.argmin(r))
                    if r[k] < worst:
                        worst, node = float(r[k]), {"check": kind, "mode": j, "x": X[k].tolist(), "t": float(t)}
    return worst, node


def calibrate_c(spec: ProblemSpec, template: BarrierParams, X, times) -> CalibrationReport:
    """Smallest c (doubling, then bisection) making both barrier families admissible.

    Admissible means: upper residual >= 0 and lower residual <= 0 at every
    node (X x times with t <= s) for every mode, and the terminal inequalities
    hold at the nodes.  The search starts at K*2^(p+1).
    """
    if spec.m > 1 and not spec.costs.closed:
        spec = spec.with_closed_costs()
    X = check_points(X, spec.n)
    times = [float(t) for t in np.atleast_1d(times) if t <= template.s + 1e-12]
    quads = spec.quadratures()
    h_vals = np.asarray(template.h(X), dtype=float)
    floor = spec.K * 2.0 ** (spec.p + 1)
    history = []

    def margin(c):
        v, node = _residual_margin(spec, template.with_c(c), X, times, quads, h_vals)
        history.append((c, v))
        return v, node

    c = floor
    v, node = margin(c)
    if v >= 0:
        return CalibrationReport(c, v, node, floor, len(history), history)
    lo = c
    while True:
        c *= 2.0
        if c > C_CAP:
            raise CalibrationError(
                f"barrier residual still negative ({v:.6g} at {node}) at c={C_CAP:.3g}; "
                "the data likely violate the growth assumptions"
            )
        v, node = margin(c)
        if v >= 0:
            break
        lo = c
    hi, v_hi, node_hi = c, v, node
    for _ in range(40):
        if hi - lo <= 1e-6 * hi:
            break
        mid = 0.5 * (lo + hi)
        v, node = margin(mid)
        if v >= 0:
            hi, v_hi, node_hi = mid, v, node
        else:
            lo = mid
    return CalibrationReport(hi, v_hi, node_hi, floor, len(history), history)


@dataclass
class EnvelopeReport:
    passed: bool
    fraction_inside: float
    worst_upper: float
    worst_lower: float
    nodes: int

    def line(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (
            f"envelope {verdict}: {100 * self.fraction_inside:.2f}% of {self.nodes} nodes inside; "
            f"min(upper-u) {self.worst_upper:.6g}, min(u-lower) {self.worst_lower:.6g}"
        )


def check_envelope(result, params: BarrierParams, spec: ProblemSpec | None = None) -> EnvelopeReport:
    """lower_j <= u_j <= upper_j at every node of a solve with t <= s."""
    spec = spec or result.spec
    costs = spec.costs if spec.m == 1 or spec.costs.closed else spec.with_closed_costs().costs
    grid = result.grid
    X = grid.points()
    U = result.u.flat()
    inside = total = 0
    wu = wl = math.inf
    for k, t in enumerate(grid.times()):
        if t > params.s + 1e-12:
            continue
        for j in range(spec.m):
            up = upper_barrier(params, costs, j, X, t) - U[j, k]
            lo = U[j, k] - lower_barrier(params, j, X, t)
            ok = (up >= 0) & (lo >= 0)
            inside += int(ok.sum())
            total += ok.size
            wu = min(wu, float(up.min()))
            wl = min(wl, float(lo.min()))
    frac = inside / total if total else 1.0
    return EnvelopeReport(inside == total, frac, wu, wl, total)


def barrier_boundary(params_list, costs: SwitchingCostField):
    """Exterior rule built from the pointwise minimum of several upper families."""

    def value(i, Y, t):
        return np.min(np.stack([upper_barrier(p, costs, i, Y, t) for p in params_list]), axis=0)

    return value
