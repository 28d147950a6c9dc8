"""Switching costs: obstacle operator, no-loop check and cheapest-chain closure."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .expressions import Expr, as_expr

__all__ = [
    "SwitchingCostField",
    "NoLoopReport",
    "LoopViolation",
    "obstacle",
    "obstacle_argmax",
    "simple_loops",
    "min_loop_value",
    "no_loop_check",
    "close_matrix",
    "enumerate_chain_costs",
    "triangle_closure",
    "triangle_defect",
]


class LoopViolation(ValueError):
    """A switching loop with negative total cost was found."""


@dataclass(frozen=True)
class SwitchingCostField:
    """Cost fields c_ij(x, t); the diagonal is identically zero.

    With ``closed=True`` every evaluation returns the cheapest-chain closure of
    the underlying matrix at that point.
    """

    c: tuple[tuple[Expr, ...], ...]
    closed: bool = False

    def __post_init__(self):
        m = len(self.c)
        rows = []
        for i, row in enumerate(self.c):
            if len(row) != m:
                raise ValueError("cost matrix must be square")
            new = []
            for j, entry in enumerate(row):
                if i == j:
                    e = as_expr(0.0 if entry is None else entry, f"c[{i}][{j}]")
                    if not (e.is_constant and float(e(np.zeros((1, 1)))[0]) == 0.0):
                        raise ValueError(f"diagonal cost c[{i}][{i}] must be zero")
                    new.append(as_expr(0.0, f"c[{i}][{j}]"))
                else:
                    new.append(as_expr(entry, f"c[{i}][{j}]"))
            rows.append(tuple(new))
        object.__setattr__(self, "c", tuple(rows))

    @classmethod
    def from_matrix(cls, matrix, closed: bool = False) -> SwitchingCostField:
        return cls(tuple(tuple(row) for row in matrix), closed=closed)

    @classmethod
    def zeros(cls, m: int) -> SwitchingCostField:
        return cls(tuple(tuple(0.0 for _ in range(m)) for _ in range(m)))

    @property
    def m(self) -> int:
        return len(self.c)

    def raw(self, X, t) -> np.ndarray:
        """Unclosed cost matrices, shape (N, m, m)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros((X.shape[0], self.m, self.m))
        for i in range(self.m):
            for j in range(self.m):
                if i != j:
                    out[:, i, j] = self.c[i][j](X, t)
        return out

    def __call__(self, X, t) -> np.ndarray:
        C = self.raw(X, t)
        return close_matrix(C) if self.closed else C

    def entry(self, i: int, j: int, X, t) -> np.ndarray:
        if not self.closed:
            return self.c[i][j](X, t)
        return self(X, t)[:, i, j]

    def is_constant(self, i: int, j: int) -> bool:
        """True when c_ij is a constant field (zero derivative bounds)."""
        if i == j:
            return True
        if self.closed:
            return all(e.is_constant for row in self.c for e in row)
        return self.c[i][j].is_constant

    def sources(self) -> list[list[str]]:
        return [[e.source for e in row] for row in self.c]


def obstacle(u, costs, i: int):
    """M_i u = max_{j != i} (u_j - c_ij); -inf when there is no other mode.

    ``u`` has shape (m,) or (m, N); ``costs`` (m, m) or (N, m, m).
    """
    u = np.asarray(u, dtype=float)
    C = np.asarray(costs, dtype=float)
    m = u.shape[0]
    if m == 1:
        return -np.inf if u.ndim == 1 else np.full(u.shape[1:], -np.inf)
    others = [j for j in range(m) if j != i]
    if C.ndim == 2:
        cand = np.stack([u[j] - C[i, j] for j in others])
    else:
        cand = np.stack([u[j] - C[:, i, j] for j in others])
    return cand.max(axis=0)


def obstacle_argmax(u, costs, i: int):
    """Index of the maximising competitor in M_i u (-1 when m == 1)."""
    u = np.asarray(u, dtype=float)
    C = np.asarray(costs, dtype=float)
    m = u.shape[0]
    if m == 1:
        return np.full(u.shape[1:], -1, dtype=int) if u.ndim > 1 else -1
    others = np.array([j for j in range(m) if j != i])
    if C.ndim == 2:
        cand = np.stack([u[j] - C[i, j] for j in others])
    else:
        cand = np.stack([u[j] - C[:, i, j] for j in others])
    return others[np.argmax(cand, axis=0)]


def simple_loops(m: int) -> list[tuple[int, ...]]:
    """All simple directed cycles on m nodes, each listed once (smallest node first)."""
    loops = []
    for length in range(2, m + 1):
        for start in range(m):
            rest = [k for k in range(start + 1, m)]
            for perm in itertools.permutations(rest, length - 1):
                loops.append((start, *perm))
    return loops


def _loop_sums(C: np.ndarray, loops) -> np.ndarray:
    sums = np.zeros((C.shape[0], len(loops)))
    for q, loop in enumerate(loops):
        closed = loop + (loop[0],)
        for a, b in zip(closed[:-1], closed[1:]):
            sums[:, q] += C[:, a, b]
    return sums


def min_loop_value(C) -> tuple[np.ndarray, list]:
    """Minimal simple-loop cost at each point, with the minimising loop."""
    C = np.asarray(C, dtype=float)
    if C.ndim == 2:
        C = C[None]
    m = C.shape[-1]
    loops = simple_loops(m)
    if not loops:
        return np.full(C.shape[0], np.inf), [None] * C.shape[0]
    sums = _loop_sums(C, loops)
    arg = np.argmin(sums, axis=1)
    return sums[np.arange(C.shape[0]), arg], [loops[a] for a in arg]


@dataclass
class NoLoopReport:
    passed: bool
    min_value: float
    loop: tuple[int, ...] | None
    worst_point: dict | None

    def message(self) -> str:
        if self.loop is None:
            return "(O1) vacuous: a single mode has no loops"
        chain = "->".join(str(k) for k in self.loop + (self.loop[0],))
        verdict = "pass" if self.passed else "FAIL"
        return f"(O1) {verdict}: minimal loop {chain} costs {self.min_value:.6g}"


def no_loop_check(costs: SwitchingCostField, X, t) -> NoLoopReport:
    """Check every simple switching loop has strictly positive cost at the samples."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
    vals, loops = min_loop_value(costs(X, t))
    if loops[0] is None:
        return NoLoopReport(True, float("inf"), None, None)
    k = int(np.argmin(vals))
    return NoLoopReport(
        passed=bool(np.all(vals > 0)),
        min_value=float(vals[k]),
        loop=loops[k],
        worst_point={"x": X[k].tolist(), "t": float(t[k])},
    )


def close_matrix(C) -> np.ndarray:
    """Pointwise all-pairs cheapest chains for cost matrices of shape (..., m, m).

    Floyd-Warshall relaxation followed by min-plus squaring until nothing
    changes, so the result satisfies c_ik <= c_ij + c_jk exactly in floating
    point and closing twice is a no-op.
    """
    D = np.array(C, dtype=float, copy=True)
    m = D.shape[-1]
    idx = np.arange(m)
    D[..., idx, idx] = 0.0
    for j in range(m):
        D = np.minimum(D, D[..., :, j, None] + D[..., None, j, :])
        if np.any(D[..., idx, idx] < 0):
            raise LoopViolation("(O1) violated: a switching loop with negative total cost exists")
    for _ in range(4 * m + 4):
        nxt = np.min(D[..., :, :, None] + D[..., None, :, :], axis=-2)
        nxt = np.minimum(D, nxt)
        if np.array_equal(nxt, D):
            break
        D = nxt
    else:  # pragma: no cover - unreachable without negative loops
        raise LoopViolation("(O1) violated: closure did not reach a fixed point")
    if np.any(D[..., idx, idx] < 0):
        raise LoopViolation("(O1) violated: a switching loop with negative total cost exists")
    return D


def enumerate_chain_costs(C) -> np.ndarray:
    """Brute-force cheapest simple chain i -> j for one (m, m) matrix.

    Independent of :func:`close_matrix`; intended for small m as a check.
    """
    C = np.asarray(C, dtype=float)
    m = C.shape[0]
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            best = C[i, j]
            middle = [k for k in range(m) if k not in (i, j)]
            for length in range(1, len(middle) + 1):
                for mid in itertools.permutations(middle, length):
                    path = (i, *mid, j)
                    total = sum(C[a, b] for a, b in zip(path[:-1], path[1:]))
                    best = min(best, total)
            out[i, j] = best
    return out


def triangle_closure(costs: SwitchingCostField) -> SwitchingCostField:
    """Replace c_ij by the cost of the cheapest switching chain from i to j."""
    return costs if costs.closed else replace(costs, closed=True)


def triangle_defect(C) -> tuple[np.ndarray, np.ndarray]:
    """min over distinct (i,j,k) of c_ij + c_jk - c_ik at each point and the minimising triple.

    Triples with a repeated index have zero slack and are skipped; with fewer
    than three modes the slack is +inf.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim == 2:
        C = C[None]
    m = C.shape[-1]
    slack = C[:, :, :, None] + C[:, None, :, :] - C[:, :, None, :]  # [p, i, j, k]
    i, j, k = np.ogrid[:m, :m, :m]
    repeated = (i == j) | (j == k) | (i == k)
    slack = np.where(repeated[None], np.inf, slack)
    flat = slack.reshape(C.shape[0], -1)
    arg = np.argmin(flat, axis=1)
    triples = np.stack(np.unravel_index(arg, (m, m, m)), axis=1)
    return flat[np.arange(C.shape[0]), arg], triples
