import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from switchpide.grid import GridSpec, TerminalDirichlet, TerminalShift
from switchpide.levy import IntegrabilityError, JumpMap, LevyMeasureSpec, apply_nonlocal, build_quadrature
from switchpide.model import TerminalData

GRID = GridSpec(((-4.0, 4.0),), 81, 3, 1.0)
X = GRID.points()
ETA = JumpMap.identity(1, 1)


def _atom(z, w):
    return build_quadrature(LevyMeasureSpec(kind="finite-atoms", atoms=[z], weights=[w]))


def test_atom_passes_through_as_outer_node():
    q = _atom(2.0, 0.3)
    assert q.size == 1
    assert q.nodes[0, 0] == 2.0 and q.weights[0] == 0.3
    assert not q.inner[0]


def test_empty_measure_has_no_nodes():
    q = build_quadrature(LevyMeasureSpec())
    assert q.size == 0 and q.small_weights.size == 0
    out = apply_nonlocal(0, X[:, 0] ** 2, 2 * X, q, ETA, GRID)
    np.testing.assert_array_equal(out, 0.0)


def test_truncated_stable_self_refinement():
    nu = LevyMeasureSpec(kind="truncated-stable", alpha=0.5, tempering=1.0, kappa=1e-3)
    q = build_quadrature(nu, tol=1e-6)
    fine = build_quadrature(nu, tol=1e-6, panels=10 * q.panels)
    assert abs(q.moment(2.0, 0.0, 1.0) - fine.moment(2.0, 0.0, 1.0)) < 1e-6


def test_stable_without_truncation_is_not_integrable():
    nu = LevyMeasureSpec(kind="truncated-stable", alpha=0.5, tempering=0.0)
    with pytest.raises(IntegrabilityError):
        build_quadrature(nu)


def test_outer_atom_on_quadratic():
    u = X[:, 0] ** 2
    out = apply_nonlocal(0, u, 2 * X, _atom(2.0, 0.3), ETA, GRID, extension=TerminalShift(TerminalData.build(["x**2"])))
    centre = int(np.argmin(np.abs(X[:, 0])))
    assert out[centre] == pytest.approx(1.2, abs=1e-12)


def test_inner_atom_annihilates_linear():
    ext = TerminalShift(TerminalData.build(["x"]))
    out = apply_nonlocal(0, X[:, 0], np.ones_like(X), _atom(0.5, 1.0), ETA, GRID, extension=ext)
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_inner_atom_on_quadratic_at_origin():
    ext = TerminalShift(TerminalData.build(["x**2"]))
    out = apply_nonlocal(0, X[:, 0] ** 2, 2 * X, _atom(0.5, 1.0), ETA, GRID, extension=ext)
    centre = int(np.argmin(np.abs(X[:, 0])))
    assert out[centre] == pytest.approx(0.25, abs=1e-12)


@given(
    st.floats(-3, 3),
    st.floats(-3, 3),
    st.lists(st.floats(0.05, 1.0), min_size=1, max_size=4),
    st.lists(st.floats(0.1, 2.0), min_size=4, max_size=4),
)
def test_compensated_annihilation_of_affine(slope, intercept, radii, weights):
    zs = np.array([r * (-1) ** k for k, r in enumerate(radii)])
    nu = LevyMeasureSpec(kind="finite-atoms", atoms=zs, weights=weights[: zs.size])
    q = build_quadrature(nu)
    assert q.inner.all()
    u = slope * X[:, 0] + intercept
    ext = TerminalShift(TerminalData.build([f"{slope}*x"]))
    out = apply_nonlocal(0, u, np.full_like(X, slope), q, ETA, GRID, extension=ext)
    np.testing.assert_allclose(out, 0.0, atol=1e-10 * (1 + abs(slope) + abs(intercept)))


@given(st.integers(1, 10))
def test_translation_covariance(shift_nodes):
    h = GRID.dx[0]
    s = shift_nodes * h
    nu = LevyMeasureSpec(kind="finite-atoms", atoms=[2 * h, -0.5], weights=[0.7, 0.4])
    q = build_quadrature(nu)

    def J(offset):
        f = lambda x: np.sin(x - offset)  # noqa: E731
        ext = TerminalDirichlet(TerminalData.build([f"sin(x-{offset})"]))
        return apply_nonlocal(0, f(X[:, 0]), np.cos(X - offset), q, ETA, GRID, extension=ext)

    base, moved = J(0.0), J(s)
    k = shift_nodes
    inner = slice(20, 60)
    np.testing.assert_allclose(moved[inner.start + k: inner.stop + k], base[inner], atol=1e-12)


def test_panel_refinement_consistency():
    nu = LevyMeasureSpec(kind="compound-poisson-gaussian", intensity=1.0, mean=0.2, std=0.4)
    fine_grid = GridSpec(((-6.0, 6.0),), 241, 3, 1.0)
    Xf = fine_grid.points()
    ext = TerminalDirichlet(TerminalData.build(["exp(-x**2)"]))
    vals = []
    for panels in (1, 2, 4):
        q = build_quadrature(nu, panels=panels, order=4)
        u = np.exp(-Xf[:, 0] ** 2)
        vals.append(apply_nonlocal(0, u, -2 * Xf * u[:, None], q, ETA, fine_grid, extension=ext))
    d1 = np.abs(vals[1] - vals[0]).max()
    d2 = np.abs(vals[2] - vals[1]).max()
    assert d2 <= d1 + 1e-12
