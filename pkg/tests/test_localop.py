import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import build
from switchpide.grid import GridSpec, TerminalDirichlet
from switchpide.localop import MonotonicityError, apply_local, assemble_local, local_stencil
from switchpide.model import TerminalData


def one_mode(n, mode, terminal):
    return build({"dims": {"n": n, "m": 1, "T": 1}, "p": 2, "K": 10, "modes": [mode], "costs": [[0]], "terminal": [terminal]})


def test_second_difference_exact_on_quadratic():
    spec = one_mode(1, {"sigma": 1}, "x**2")
    grid = spec.grid(nx=41, nt=3, box=((-2, 2),))
    X = grid.points()
    out = apply_local(0, X[:, 0] ** 2, spec, 0.0, grid)
    np.testing.assert_allclose(out[grid.interior_mask()], 2.0, atol=1e-10)


def test_upwind_drift_and_discount_at_one():
    spec = one_mode(1, {"sigma": 1, "b": 3, "c0": 1}, "x**2")
    for nx in (41, 81, 161):
        grid = spec.grid(nx=nx, nt=3, box=((-2, 2),))
        X = grid.points()
        out = apply_local(0, X[:, 0] ** 2, spec, 0.0, grid)
        q = int(np.argmin(np.abs(X[:, 0] - 1.0)))
        h = grid.dx[0]
        # forward difference of x^2 at 1 is 2 + h, so the drift term carries 3h
        assert out[q] == pytest.approx(7.0 + 3.0 * h, abs=1e-9)


def test_affine_drift_exact():
    spec = one_mode(1, {"b": 1}, "x")
    grid = spec.grid(nx=21, nt=3, box=((-1, 1),))
    out = apply_local(0, grid.points()[:, 0], spec, 0.0, grid)
    np.testing.assert_allclose(out, 1.0, atol=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2))
def test_affine_reproduction_2d(b0, b1, s0, s1):
    spec = one_mode(2, {"b": [b0, b1]}, f"{s0}*x0+{s1}*x1")
    grid = spec.grid(nx=(9, 11), nt=3, box=((-1, 1), (-2, 1)))
    X = grid.points()
    u = s0 * X[:, 0] + s1 * X[:, 1] + 0.7
    out = apply_local(0, u, spec, 0.0, grid)
    np.testing.assert_allclose(out, b0 * s0 + b1 * s1, atol=1e-10 * (1 + abs(b0) + abs(b1)))


@given(st.floats(0.1, 2.0), st.floats(0.1, 2.0))
def test_quadratic_reproduction_diagonal_2d(s0, s1):
    spec = one_mode(2, {"sigma": [[s0, 0], [0, s1]]}, "x0**2+3*x1**2")
    grid = spec.grid(nx=(9, 9), nt=3, box=((-1, 1), (-1, 1)))
    X = grid.points()
    out = apply_local(0, X[:, 0] ** 2 + 3 * X[:, 1] ** 2, spec, 0.0, grid)
    np.testing.assert_allclose(out, 2 * s0**2 + 6 * s1**2, rtol=1e-10)


@given(
    st.floats(0.2, 1.5),
    st.floats(0.2, 1.5),
    st.floats(-0.5, 0.5),
    st.floats(-3, 3),
    st.floats(-3, 3),
    st.floats(0, 2),
)
def test_discrete_monotonicity(s0, s1, rho, b0, b1, c0):
    a12 = rho * min(s0, s1) ** 2
    a = np.array([[s0**2, a12], [a12, s1**2]])
    grid = GridSpec(((-1.0, 1.0), (-1.0, 1.0)), (11, 11), 3, 1.0)
    N = grid.size
    st_ = local_stencil(grid, np.broadcast_to(a, (N, 2, 2)).copy(), np.tile([b0, b1], (N, 1)), np.full(N, c0))
    assert np.all(st_.weights >= 0)
    rows = np.nonzero(grid.interior_mask())[0]
    A, _ = assemble_local(grid, st_, 0, 0.0, TerminalDirichlet(TerminalData.build(["0"])))
    A = A.tocsr()
    for r in rows[::7]:
        row = A.getrow(r).toarray().ravel()
        row[r] = 0.0
        assert row.min() >= 0.0


def test_cross_term_without_dominance_is_an_error():
    grid = GridSpec(((-1.0, 1.0), (-1.0, 1.0)), (11, 11), 3, 1.0)
    N = grid.size
    a = np.broadcast_to(np.array([[1.0, 2.0], [2.0, 1.0]]), (N, 2, 2)).copy()
    with pytest.raises(MonotonicityError):
        local_stencil(grid, a, np.zeros((N, 2)), np.zeros(N))
