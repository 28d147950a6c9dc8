"""Levy measures, jump maps and the quadrature realisation of the nonlocal term.

The nonlocal operator of mode i acting on u at (x, t) is

    J_i u(x) = sum_q w_q [u(x + eta_q) - u(x) - 1{|z_q| <= 1} <eta_q, Du(x)>]
               + tr(a_corr(x, t) D^2 u(x)),

where eta_q = eta_i(x, t, z_q) and a_corr carries the jumps below the cutoff
kappa by second-moment matching: a_corr = 1/2 int_{|z|<kappa} eta eta^T nu(dz).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import integrate, special

from .expressions import Expr, as_expr
from .grid import Extension, GridSpec, point_operator

__all__ = [
    "LevyMeasureSpec",
    "JumpMap",
    "Quadrature",
    "IntegrabilityError",
    "build_quadrature",
    "apply_nonlocal",
    "nonlocal_parts",
    "NonlocalParts",
]

KINDS = ("empty", "finite-atoms", "compound-poisson-gaussian", "truncated-stable")


class IntegrabilityError(ValueError):
    """The measure violates the (F3) moment condition."""


@dataclass(frozen=True)
class LevyMeasureSpec:
    """Parametric Levy measure on R^ell minus the origin.

    kinds and their parameters:

    * ``empty``
    * ``finite-atoms``: ``atoms`` (k, ell) and positive ``weights`` (k,)
    * ``compound-poisson-gaussian``: ``intensity`` times the N(mean, std^2) law (ell == 1)
    * ``truncated-stable``: density ``scale |z|^(-1-alpha) exp(-tempering |z|)`` on
      ``0 < |z| <= zmax`` (ell == 1); needs ``tempering > 0`` or finite ``zmax``.

    ``kappa`` is the cutoff below which jumps become a diffusion correction.
    """

    kind: str = "empty"
    ell: int = 1
    atoms: np.ndarray | None = field(default=None, repr=False)
    weights: np.ndarray | None = field(default=None, repr=False)
    intensity: float = 0.0
    mean: float = 0.0
    std: float = 1.0
    alpha: float = 0.5
    scale: float = 1.0
    tempering: float = 0.0
    zmax: float = math.inf
    kappa: float = 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown Levy measure kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "finite-atoms":
            atoms = np.asarray(self.atoms, dtype=float)
            if atoms.ndim == 1:
                atoms = atoms.reshape(-1, self.ell)
            w = np.asarray(self.weights, dtype=float).ravel()
            if atoms.shape[0] != w.shape[0]:
                raise ValueError("atoms and weights differ in length")
            if atoms.shape[1] != self.ell:
                raise ValueError("atom dimension does not match ell")
            if np.any(w <= 0):
                raise ValueError("atom weights must be positive")
            if np.any(np.linalg.norm(atoms, axis=1) == 0):
                raise ValueError("atoms must avoid the origin")
            object.__setattr__(self, "atoms", atoms)
            object.__setattr__(self, "weights", w)
        elif self.kind in ("compound-poisson-gaussian", "truncated-stable"):
            if self.ell != 1:
                raise ValueError(f"{self.kind} measures are implemented for ell == 1 only")
            if self.kind == "compound-poisson-gaussian":
                if self.intensity < 0 or self.std <= 0:
                    raise ValueError("need intensity >= 0 and std > 0")
            else:
                if not 0 < self.alpha < 2:
                    raise ValueError("stability index alpha must lie in (0, 2)")
                if self.scale < 0 or self.tempering < 0 or self.zmax <= 0:
                    raise ValueError("need scale >= 0, tempering >= 0, zmax > 0")
            if not 0 < self.kappa < 1:
                raise ValueError("cutoff kappa must lie in (0, 1)")

    @property
    def is_continuous(self) -> bool:
        return self.kind in ("compound-poisson-gaussian", "truncated-stable")

    def density(self, z) -> np.ndarray:
        """Lebesgue density of a continuous measure (ell == 1)."""
        z = np.asarray(z, dtype=float)
        if self.kind == "compound-poisson-gaussian":
            return self.intensity * np.exp(-0.5 * ((z - self.mean) / self.std) ** 2) / (
                self.std * math.sqrt(2 * math.pi)
            )
        if self.kind == "truncated-stable":
            a = np.abs(z)
            with np.errstate(divide="ignore"):
                d = self.scale * a ** (-1.0 - self.alpha) * np.exp(-self.tempering * a)
            return np.where((a > 0) & (a <= self.zmax), d, 0.0)
        raise ValueError(f"{self.kind} has no density")

    def _radial(self, side: int):
        """Density along one half-line r -> density(side * r)."""
        return lambda r: float(self.density(side * r))

    def _half_integral(self, side: int, power: float, lo: float, hi: float) -> float:
        if hi <= lo:
            return 0.0
        if self.kind == "truncated-stable":
            hi = min(hi, self.zmax)
            if hi <= lo:
                return 0.0
            # scale r^(power-1-alpha) exp(-beta r), singular part via algebraic weight
            expo = power - 1.0 - self.alpha
            beta = self.tempering
            if lo == 0.0:
                val, _ = integrate.quad(
                    lambda r: math.exp(-beta * r), 0.0, hi, weight="alg", wvar=(expo, 0.0), limit=200
                )
                return self.scale * val
            if math.isinf(hi):
                if beta <= 0:
                    return math.inf
                s = expo + 1.0
                if s > 0:
                    return self.scale * beta ** (-s) * special.gamma(s) * special.gammaincc(s, beta * lo)
                val, _ = integrate.quad(lambda r: r**expo * math.exp(-beta * r), lo, math.inf, limit=200)
                return self.scale * val
            val, _ = integrate.quad(lambda r: r ** expo * math.exp(-beta * r), lo, hi, limit=200)
            return self.scale * val
        dens = self._radial(side)
        pts = None
        if not math.isinf(hi) and lo <= side * self.mean <= hi:
            pts = [side * self.mean]
        val, _ = integrate.quad(lambda r: r**power * dens(r), lo, hi, limit=200, points=pts)
        return val

    def moment(self, power: float, lo: float, hi: float) -> float:
        """int_{lo < |z| <= hi} |z|^power nu(dz)."""
        if self.kind == "empty":
            return 0.0
        if self.kind == "finite-atoms":
            r = np.linalg.norm(self.atoms, axis=1)
            sel = (r > lo) & (r <= hi)
            return float(np.sum(self.weights[sel] * r[sel] ** power))
        return sum(self._half_integral(s, power, lo, hi) for s in (1, -1))

    def f3_integral(self, p: int) -> float:
        """int_{0<|z|<=1} |z|^2 nu + int_{|z|>1} |z|^p nu."""
        return self.moment(2.0, 0.0, 1.0) + self.moment(float(p), 1.0, math.inf)

    def scaled(self, factor: float) -> LevyMeasureSpec:
        """The measure multiplied by a positive constant."""
        from dataclasses import replace

        if self.kind == "empty":
            return self
        if self.kind == "finite-atoms":
            return replace(self, weights=self.weights * factor)
        if self.kind == "compound-poisson-gaussian":
            return replace(self, intensity=self.intensity * factor)
        return replace(self, scale=self.scale * factor)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "finite-atoms":
            d["atoms"] = self.atoms.tolist()
            d["weights"] = self.weights.tolist()
        elif self.kind == "compound-poisson-gaussian":
            d.update(intensity=self.intensity, mean=self.mean, std=self.std, kappa=self.kappa)
        elif self.kind == "truncated-stable":
            d.update(alpha=self.alpha, scale=self.scale, tempering=self.tempering, kappa=self.kappa)
            if not math.isinf(self.zmax):
                d["zmax"] = self.zmax
        if self.ell != 1:
            d["ell"] = self.ell
        return d


@dataclass(frozen=True)
class JumpMap:
    """Jump directions eta_i(x, t, z) in R^n, one tuple of n fields per mode."""

    eta: tuple[tuple[Expr, ...], ...]

    @classmethod
    def identity(cls, m: int, n: int) -> JumpMap:
        comps = ("z",) if n == 1 else tuple(f"z{k}" for k in range(n))
        return cls(tuple(tuple(as_expr(c, f"eta[{i}][{k}]") for k, c in enumerate(comps)) for i in range(m)))

    def __call__(self, i: int, X, t, z) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([e(X, t, z) for e in self.eta[i]], axis=1)


@dataclass(frozen=True)
class Quadrature:
    """Discrete realisation of a Levy measure.

    ``nodes``/``weights`` represent jumps with |z| >= kappa; ``inner`` flags
    nodes inside the closed unit ball (they receive the compensator).
    ``small_nodes``/``small_weights`` encode the second moment of the jumps
    below kappa, used for the diffusion correction.
    """

    nodes: np.ndarray
    weights: np.ndarray
    inner: np.ndarray
    small_nodes: np.ndarray
    small_weights: np.ndarray
    zmax: float = 0.0
    panels: int = 0

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @property
    def intensity(self) -> float:
        return float(self.weights.sum())

    def diffusion_correction(self, jump: JumpMap, i: int, X, t) -> np.ndarray:
        """a_corr(x, t) = 1/2 int_{|z|<kappa} eta eta^T nu(dz), shape (N, n, n)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[1]
        out = np.zeros((X.shape[0], n, n))
        for z, w in zip(self.small_nodes, self.small_weights):
            e = jump(i, X, t, z)
            out += 0.5 * w * e[:, :, None] * e[:, None, :]
        return out

    def moment(self, power: float, lo: float, hi: float) -> float:
        r = np.linalg.norm(self.nodes, axis=1) if self.size else np.zeros(0)
        sel = (r > lo) & (r <= hi)
        return float(np.sum(self.weights[sel] * r[sel] ** power))


def _gauss_panels(edges: np.ndarray, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    a = edges[:-1, None]
    b = edges[1:, None]
    nodes = 0.5 * (b - a) * x[None, :] + 0.5 * (b + a)
    weights = 0.5 * (b - a) * w[None, :]
    return nodes.ravel(), weights.ravel()


def _tail_cutoff(measure: LevyMeasureSpec, p: int, tol: float) -> float:
    start = max(2.0, abs(measure.mean) + 8 * measure.std) if measure.kind == "compound-poisson-gaussian" else 2.0
    if measure.kind == "truncated-stable" and not math.isinf(measure.zmax):
        return max(measure.zmax, 1.0)
    Z = start
    for _ in range(80):
        if measure.moment(float(p), Z, math.inf) < tol:
            return Z
        Z *= 2.0
    raise IntegrabilityError("(F3) tail moment of order p does not vanish; measure is not integrable")


def _continuous_nodes(measure: LevyMeasureSpec, zmax: float, panels: int, order: int):
    kappa = measure.kappa
    nodes, weights = [], []
    top_inner = min(1.0, zmax)
    for side in (1.0, -1.0):
        if top_inner > kappa:
            edges = kappa * (top_inner / kappa) ** (np.arange(panels + 1) / panels)
            r, w = _gauss_panels(edges, order)
            nodes.append(side * r)
            weights.append(w * measure.density(side * r))
        if zmax > 1.0:
            edges = zmax ** (np.arange(panels + 1) / panels)
            r, w = _gauss_panels(edges, order)
            nodes.append(side * r)
            weights.append(w * measure.density(side * r))
    z = np.concatenate(nodes) if nodes else np.zeros(0)
    w = np.concatenate(weights) if weights else np.zeros(0)
    keep = w > 0
    return z[keep].reshape(-1, 1), w[keep]


def build_quadrature(
    measure: LevyMeasureSpec,
    tol: float = 1e-6,
    p: int = 2,
    order: int = 8,
    panels: int | None = None,
) -> Quadrature:
    """Discretise ``measure`` into weighted jump nodes.

    Atoms pass through unchanged.  Continuous measures get Gauss-Legendre
    panels (geometric in |z|) on [kappa, 1] and [1, Z_max] per half-line, with
    Z_max chosen so the truncated tail of |z|^p nu is below ``tol``.  Unless
    ``panels`` is given, the panel count doubles until the mass and the (F3)
    moments change by less than ``tol``.
    """
    empty = np.zeros((0, measure.ell))
    if measure.kind == "empty":
        return Quadrature(empty, np.zeros(0), np.zeros(0, bool), empty, np.zeros(0))
    if measure.kind == "finite-atoms":
        r = np.linalg.norm(measure.atoms, axis=1)
        return Quadrature(measure.atoms.copy(), measure.weights.copy(), r <= 1.0, empty, np.zeros(0), zmax=float(r.max()))

    total = measure.f3_integral(p)
    if not math.isfinite(total):
        raise IntegrabilityError(f"(F3) violated: measure {measure.kind} has infinite moment integral")
    zmax = _tail_cutoff(measure, p, tol)

    def stats(z, w):
        q = Quadrature(z, w, np.abs(z[:, 0]) <= 1.0, empty, np.zeros(0))
        return np.array([w.sum(), q.moment(2.0, 0.0, 1.0), q.moment(float(p), 1.0, math.inf)])

    if panels is None:
        panels = 4
        z, w = _continuous_nodes(measure, zmax, panels, order)
        prev = stats(z, w)
        for _ in range(12):
            z2, w2 = _continuous_nodes(measure, zmax, 2 * panels, order)
            cur = stats(z2, w2)
            panels *= 2
            z, w = z2, w2
            if np.all(np.abs(cur - prev) < tol):
                break
            prev = cur
    else:
        z, w = _continuous_nodes(measure, zmax, panels, order)

    small_z, small_w = [], []
    half = 0.5 * measure.kappa
    for side in (1, -1):
        m2 = measure._half_integral(side, 2.0, 0.0, measure.kappa)
        if m2 > 0:
            small_z.append([side * half])
            small_w.append(m2 / half**2)
    return Quadrature(
        nodes=z,
        weights=w,
        inner=np.abs(z[:, 0]) <= 1.0,
        small_nodes=np.array(small_z, dtype=float).reshape(-1, 1),
        small_weights=np.array(small_w, dtype=float),
        zmax=float(zmax),
        panels=int(panels),
    )


@dataclass
class NonlocalParts:
    """Explicit jump operator u -> matrix @ u + source, plus the local pieces.

    ``drift`` is the compensator -sum_inner w_q eta_q (added to b) and
    ``acorr`` the small-jump diffusion correction (added to a).
    """

    matrix: sp.csr_matrix
    source: np.ndarray
    drift: np.ndarray
    acorr: np.ndarray
    intensity: float


def nonlocal_parts(
    i: int,
    quad: Quadrature,
    jump: JumpMap,
    grid: GridSpec,
    t: float,
    extension: Extension | None,
    X: np.ndarray | None = None,
) -> NonlocalParts:
    X = grid.points() if X is None else X
    N = grid.size
    n = grid.n
    src = np.zeros(X.shape[0])
    drift = np.zeros((X.shape[0], n))
    rows, cols, vals = [np.arange(X.shape[0])], [np.arange(X.shape[0])], [np.full(X.shape[0], -quad.intensity)]
    for zq, wq, inner in zip(quad.nodes, quad.weights, quad.inner):
        e = jump(i, X, t, zq)
        W, off = point_operator(grid, X + e, i, t, extension)
        W = W.tocoo()
        rows.append(W.row)
        cols.append(W.col)
        vals.append(wq * W.data)
        src += wq * off
        if inner:
            drift -= wq * e
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(X.shape[0], N)
    )
    acorr = quad.diffusion_correction(jump, i, X, t)
    return NonlocalParts(mat, src, drift, acorr, quad.intensity)


def _hessian(u: np.ndarray, grid: GridSpec, i: int, t: float, extension: Extension | None) -> np.ndarray:
    X = grid.points()
    h = grid.dx
    n = grid.n

    def at(shift):
        W, off = point_operator(grid, X + shift, i, t, extension)
        return W @ u + off

    H = np.zeros((X.shape[0], n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h[k]
        H[:, k, k] = (at(e) - 2 * u + at(-e)) / h[k] ** 2
        for l in range(k + 1, n):
            f = np.zeros(n)
            f[l] = h[l]
            v = (at(e + f) - at(e - f) - at(-e + f) + at(-e - f)) / (4 * h[k] * h[l])
            H[:, k, l] = H[:, l, k] = v
    return H


def apply_nonlocal(
    i: int,
    u,
    grad,
    quad: Quadrature,
    jump: JumpMap,
    grid: GridSpec,
    t: float = 0.0,
    extension: Extension | None = None,
) -> np.ndarray:
    """Evaluate J_i u at every grid node.

    ``u`` is a time slice of mode i (flattened or grid-shaped) and ``grad`` the
    gradient used by the compensator, shape (size, n).  Values of u at
    ``x + eta`` come from multilinear interpolation inside the box and from
    ``extension`` outside; an exterior point without a rule raises.
    """
    u = np.asarray(u, dtype=float).ravel()
    X = grid.points()
    grad = np.asarray(grad, dtype=float).reshape(X.shape[0], grid.n)
    out = np.zeros(X.shape[0])
    for zq, wq, inner in zip(quad.nodes, quad.weights, quad.inner):
        e = jump(i, X, t, zq)
        W, off = point_operator(grid, X + e, i, t, extension)
        incr = W @ u + off - u
        if inner:
            incr -= np.sum(e * grad, axis=1)
        out += wq * incr
    if quad.small_weights.size:
        A = quad.diffusion_correction(jump, i, X, t)
        out += np.einsum("pkl,pkl->p", A, _hessian(u, grid, i, t, extension))
    return out
