"""Monotone finite-difference realisation of the local operator

    L_i u = sum_kl a_kl d_kl u + sum_k b_k d_k u - c0 u,    a = sigma sigma^T.

Second derivatives use central differences, the mixed derivative (n == 2) the
7-point stencil oriented by the sign of a_12, drifts first-order upwinding.
All off-centre weights are nonnegative; a node where the mixed term would
break that raises :class:`MonotonicityError`.  Neighbours outside the box are
ghost points resolved through an :class:`~switchpide.grid.Extension`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import Extension, GridSpec, TerminalShift, point_operator

__all__ = ["Stencil", "MonotonicityError", "local_stencil", "assemble_local", "apply_local"]


class MonotonicityError(ValueError):
    """The mixed-derivative stencil would have a negative off-centre weight."""


@dataclass
class Stencil:
    """Per-node weights: ``weights[q]`` multiplies u at ``node + offsets[q]``."""

    offsets: list[tuple[int, ...]]
    weights: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise MonotonicityError("negative off-centre weight in local stencil")


def local_stencil(grid: GridSpec, a: np.ndarray, b: np.ndarray, c0: np.ndarray, X=None) -> Stencil:
    """Build the monotone stencil from node coefficients a (N,n,n), b (N,n), c0 (N,)."""
    n = grid.n
    h = grid.dx
    N = a.shape[0]
    w: dict[tuple[int, ...], np.ndarray] = {}
    center = -np.asarray(c0, dtype=float).copy()

    def add(off, val):
        off = tuple(off)
        w[off] = w.get(off, np.zeros(N)) + val

    if n == 2:
        a12 = 0.5 * (a[:, 0, 1] + a[:, 1, 0])
        cross = np.abs(a12) / (h[0] * h[1])
    else:
        cross = np.zeros(N)
    for k in range(n):
        e = np.zeros(n, dtype=int)
        e[k] = 1
        axis_w = a[:, k, k] / h[k] ** 2 - cross
        if n == 2:
            bad = axis_w < -1e-12 * np.maximum(1.0, a[:, k, k] / h[k] ** 2)
            if bad.any():
                node = int(np.argmax(bad))
                where = "" if X is None else f" at x={np.asarray(X)[node].tolist()}"
                raise MonotonicityError(
                    f"weak diagonal dominance |a12| <= a{k + 1}{k + 1} * h{2 - k}/h{k + 1} fails at node {node}{where}"
                )
            axis_w = np.maximum(axis_w, 0.0)
        add(e, axis_w)
        add(-e, axis_w)
        center -= 2 * a[:, k, k] / h[k] ** 2
        bk = b[:, k]
        add(e, np.maximum(bk, 0.0) / h[k])
        add(-e, np.maximum(-bk, 0.0) / h[k])
        center -= np.abs(bk) / h[k]
    if n == 2:
        pos = a12 >= 0
        add((1, 1), np.where(pos, cross, 0.0))
        add((-1, -1), np.where(pos, cross, 0.0))
        add((1, -1), np.where(pos, 0.0, cross))
        add((-1, 1), np.where(pos, 0.0, cross))
        center += 2 * cross
    offsets = list(w)
    return Stencil(offsets, np.stack([w[o] for o in offsets]), center)


def assemble_local(
    grid: GridSpec,
    stencil: Stencil,
    i: int,
    t: float,
    extension: Extension | None,
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse A and source s with L u = A @ u + s at every node."""
    N = grid.size
    X = grid.points()
    idx = grid.multi_index()
    nx = np.array(grid.nx)
    strides = np.cumprod((1,) + grid.nx[::-1])[:-1][::-1]
    rows = [np.arange(N)]
    cols = [np.arange(N)]
    vals = [stencil.center]
    src = np.zeros(N)
    for off, wq in zip(stencil.offsets, stencil.weights):
        nb = idx + np.array(off)
        inside = np.all((nb >= 0) & (nb < nx), axis=1)
        live = wq != 0
        sel = inside & live
        rows.append(np.nonzero(sel)[0])
        cols.append((nb[sel] * strides).sum(axis=1))
        vals.append(wq[sel])
        out = ~inside & live
        if out.any():
            ghost = X[out] + np.array(off) * grid.dx
            W, offset = point_operator(grid, ghost, i, t, extension)
            W = W.tocoo()
            out_rows = np.nonzero(out)[0]
            rows.append(out_rows[W.row])
            cols.append(W.col)
            vals.append(wq[out][W.row] * W.data)
            src[out] += wq[out] * offset
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    return A, src


def apply_local(i: int, u, spec, t: float, grid: GridSpec, extension: Extension | None = None) -> np.ndarray:
    """L_i u at every node of ``grid`` (ghost values from ``extension``).

    The default extension shifts u by the increments of the terminal data.
    """
    if extension is None:
        extension = TerminalShift(spec.terminal)
    X = grid.points()
    a, b, c0, _ = spec.modes[i].evaluate(X, t)
    A, s = assemble_local(grid, local_stencil(grid, a, b, c0, X), i, t, extension)
    return A @ np.asarray(u, dtype=float).ravel() + s
