"""Tensor grids, grid functions, multilinear interpolation and exterior rules."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from sklearn.utils import check_array

__all__ = [
    "GridSpec",
    "GridFunction",
    "Extension",
    "TerminalShift",
    "TerminalDirichlet",
    "BarrierDirichlet",
    "check_points",
    "interpolation_matrix",
    "point_operator",
]


def check_points(X, n: int, name: str = "X") -> np.ndarray:
    """Coerce ``X`` to a finite float array of shape (N, n).

    A 1-D array is read as N points when n == 1 and as a single point otherwise.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1) if n == 1 else X.reshape(1, -1)
    X = check_array(X, dtype=np.float64, ensure_all_finite=True, input_name=name)
    if X.shape[1] != n:
        raise ValueError(f"{name} has {X.shape[1]} columns, expected {n}")
    return X


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time lattice on an axis-aligned box times [0, T]."""

    box: tuple[tuple[float, float], ...]
    nx: tuple[int, ...]
    nt: int
    T: float = 1.0

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        nx = tuple(int(k) for k in np.atleast_1d(self.nx))
        if len(nx) == 1 and len(box) > 1:
            nx = nx * len(box)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "nx", nx)
        if len(box) not in (1, 2):
            raise ValueError("only n = 1 or n = 2 grids are supported")
        if len(nx) != len(box):
            raise ValueError("nx must give one count per axis")
        if any(hi <= lo for lo, hi in box):
            raise ValueError(f"degenerate box {box}")
        if any(k < 3 for k in nx):
            raise ValueError("need at least 3 points per axis")
        if self.nt < 2:
            raise ValueError("need at least 2 time levels")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")

    @property
    def n(self) -> int:
        return len(self.box)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nx

    @property
    def size(self) -> int:
        return int(np.prod(self.nx))

    @property
    def dx(self) -> np.ndarray:
        return np.array([(hi - lo) / (k - 1) for (lo, hi), k in zip(self.box, self.nx)])

    @property
    def dt(self) -> float:
        return self.T / (self.nt - 1)

    @property
    def lo(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.box])

    @property
    def hi(self) -> np.ndarray:
        return np.array([hi for _, hi in self.box])

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, k) for (lo, hi), k in zip(self.box, self.nx)]

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt)

    def points(self) -> np.ndarray:
        """All nodes, C-ordered, shape (size, n)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def multi_index(self) -> np.ndarray:
        """Integer index of every node, shape (size, n)."""
        mesh = np.meshgrid(*[np.arange(k) for k in self.nx], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def interior_mask(self) -> np.ndarray:
        idx = self.multi_index()
        nx = np.array(self.nx)
        return np.all((idx > 0) & (idx < nx - 1), axis=1)

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*self.box)), dtype=float)

    def project(self, Y: np.ndarray) -> np.ndarray:
        return np.clip(Y, self.lo, self.hi)

    def with_counts(self, nx=None, nt=None) -> GridSpec:
        return GridSpec(self.box, self.nx if nx is None else nx, self.nt if nt is None else nt, self.T)


@dataclass(frozen=True)
class GridFunction:
    """Values of an m-vector field on a space-time lattice.

    ``values`` has shape (m, nt, *nx); time level k sits at ``grid.times()[k]``.
    """

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 + self.grid.n or vals.shape[1:] != (self.grid.nt, *self.grid.nx):
            raise ValueError(f"values shape {vals.shape} inconsistent with grid {self.grid}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function contains non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        """View of shape (m, nt, size)."""
        return self.values.reshape(self.m, self.grid.nt, self.grid.size)

    def slice_at(self, k: int) -> np.ndarray:
        """Flattened time level k, shape (m, size)."""
        return self.flat()[:, k, :]

    def time_index(self, t: float) -> int:
        k = int(round(t / self.grid.dt))
        if k < 0 or k >= self.grid.nt or abs(k * self.grid.dt - t) > 1e-9 * max(1.0, self.grid.T):
            raise ValueError(f"t={t} is not a time level of the grid")
        return k

    def __call__(self, X, t: float = 0.0) -> np.ndarray:
        """Interpolate all modes at points X (inside the box) and time level t."""
        X = check_points(X, self.grid.n)
        P = self.grid.project(X)
        if np.any(np.abs(P - X) > 1e-12 * (1 + np.abs(X))):
            raise ValueError("evaluation points must lie inside the grid box")
        W = interpolation_matrix(self.grid, P)
        k = self.time_index(t)
        return (W @ self.slice_at(k).T)


def interpolation_matrix(grid: GridSpec, P: np.ndarray) -> sp.csr_matrix:
    """Multilinear interpolation weights for points P inside the box."""
    P = np.atleast_2d(P)
    npts = P.shape[0]
    dx = grid.dx
    idx = []
    frac = []
    for k in range(grid.n):
        s = (P[:, k] - grid.box[k][0]) / dx[k]
        snap = np.abs(s - np.round(s)) < 1e-9
        s = np.where(snap, np.round(s), s)
        i0 = np.clip(np.floor(s).astype(np.int64), 0, grid.nx[k] - 2)
        f = np.clip(s - i0, 0.0, 1.0)
        idx.append(i0)
        frac.append(f)
    rows, cols, vals = [], [], []
    strides = np.cumprod((1,) + grid.nx[::-1])[:-1][::-1]
    for corner in itertools.product((0, 1), repeat=grid.n):
        w = np.ones(npts)
        flat = np.zeros(npts, dtype=np.int64)
        for k, c in enumerate(corner):
            w = w * (frac[k] if c else 1.0 - frac[k])
            flat = flat + (idx[k] + c) * strides[k]
        keep = w > 0
        rows.append(np.nonzero(keep)[0])
        cols.append(flat[keep])
        vals.append(w[keep])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(npts, grid.size),
    )


class Extension:
    """Rule defining u outside the grid box.

    ``exterior(i, Y, P, t)`` returns ``(uses_interior, offset)``: the value at an
    exterior point Y (with box projection P) is
    ``uses_interior * u(P) + offset``.  Rules that depend on u must do so with a
    nonnegative weight so the discrete scheme stays monotone.
    """

    name = "abstract"

    def exterior(self, i: int, Y: np.ndarray, P: np.ndarray, t: float):
        raise NotImplementedError


class TerminalShift(Extension):
    """u(Y) = u(P) + g_i(Y) - g_i(P): the solution grows like the terminal data.

    Exact for solutions of the form g_i(x) + phi(t).
    """

    name = "terminal-shift"

    def __init__(self, terminal):
        self.terminal = terminal

    def exterior(self, i, Y, P, t):
        g = self.terminal.g[i]
        return True, g(Y) - g(P)


class TerminalDirichlet(Extension):
    """u(Y) = g_i(Y): frozen terminal data outside the box."""

    name = "terminal"

    def __init__(self, terminal):
        self.terminal = terminal

    def exterior(self, i, Y, P, t):
        return False, self.terminal.g[i](Y)


class BarrierDirichlet(Extension):
    """u(Y) = barrier(i, Y, t), e.g. an upper or lower barrier family."""

    name = "barrier"

    def __init__(self, barrier):
        self.barrier = barrier

    def exterior(self, i, Y, P, t):
        return False, np.asarray(self.barrier(i, Y, t), dtype=float)


def point_operator(grid: GridSpec, Y: np.ndarray, i: int, t: float, extension: Extension | None):
    """Linear-affine map u -> u(Y) = W @ u + offset, extension applied outside the box."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    P = grid.project(Y)
    outside = np.any(np.abs(P - Y) > 1e-12 * (1.0 + np.abs(Y)), axis=1)
    W = interpolation_matrix(grid, P)
    offset = np.zeros(Y.shape[0])
    if outside.any():
        if extension is None:
            bad = Y[np.argmax(outside)]
            raise ValueError(f"point {bad.tolist()} lies outside the grid box and no extension rule is set")
        uses, off = extension.exterior(i, Y[outside], P[outside], t)
        offset[outside] = off
        if not uses:
            scale = np.where(outside, 0.0, 1.0)
            W = sp.diags(scale) @ W
            W = W.tocsr()
            W.eliminate_zeros()
    return W, offset
