import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from switchpide.switchgraph import (
    LoopViolation,
    SwitchingCostField,
    close_matrix,
    enumerate_chain_costs,
    min_loop_value,
    no_loop_check,
    obstacle,
    obstacle_argmax,
    triangle_closure,
    triangle_defect,
)


def test_obstacle_single_competitor():
    C = np.array([[0, 1.0], [0, 0]])
    assert obstacle([3.0, 5.0], C, 0) == 4.0


def test_obstacle_two_competitors():
    C = np.array([[0, 1.0, 0.5], [0, 0, 0], [0, 0, 0]])
    assert obstacle([3.0, 5.0, 0.0], C, 0) == 4.0
    assert obstacle_argmax([3.0, 5.0, 0.0], C, 0) == 1


def test_obstacle_one_mode_is_minus_infinity():
    assert obstacle([1.0], np.zeros((1, 1)), 0) == -np.inf


@pytest.mark.parametrize(
    "C, passed, value",
    [
        ([[0, 1], [-0.5, 0]], True, 0.5),
        ([[0, 1], [-1, 0]], False, 0.0),
        ([[0, 1, 10], [10, 0, 1], [1, 10, 0]], True, 3.0),
    ],
)
def test_no_loop_check(C, passed, value):
    rep = no_loop_check(SwitchingCostField.from_matrix(C), np.zeros((1, 1)), 0.0)
    assert rep.passed is passed
    assert rep.min_value == value


def test_closure_routes_through_cheaper_chain():
    C = np.array([[0, 1, 5], [50, 0, 1], [50, 50, 0]], dtype=float)
    assert close_matrix(C)[0, 2] == 2.0


def test_closure_fixed_point_on_closed_input():
    C = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    np.testing.assert_array_equal(close_matrix(C), C)


def test_negative_loop_raises():
    with pytest.raises(LoopViolation):
        close_matrix(np.array([[0, -1.0], [0.5, 0]]))


@st.composite
def no_loop_matrices(draw):
    m = draw(st.integers(2, 4))
    C = draw(arrays(np.float64, (m, m), elements=st.floats(-1, 3, allow_nan=False)))
    np.fill_diagonal(C, 0.0)
    vals, _ = min_loop_value(C)
    assume(vals[0] > 1e-9)
    return C


@given(no_loop_matrices())
def test_closure_matches_chain_enumeration(C):
    np.testing.assert_allclose(close_matrix(C), enumerate_chain_costs(C), rtol=0, atol=1e-12)


@given(no_loop_matrices())
def test_closure_dominated_idempotent_and_triangle(C):
    D = close_matrix(C)
    assert np.all(D <= C)
    np.testing.assert_array_equal(close_matrix(D), D)
    if C.shape[0] >= 3:
        defect, _ = triangle_defect(D)
        assert defect.min() >= 0.0


@given(no_loop_matrices())
def test_closure_preserves_minimal_loop(C):
    field = SwitchingCostField.from_matrix(C.tolist())
    before = no_loop_check(field, np.zeros((1, 1)), 0.0)
    after = no_loop_check(triangle_closure(field), np.zeros((1, 1)), 0.0)
    assert after.passed
    assert after.min_value == pytest.approx(before.min_value, abs=1e-12)


@given(
    arrays(np.float64, (3, 5), elements=st.floats(-5, 5, allow_nan=False)),
    arrays(np.float64, (3, 5), elements=st.floats(0, 2, allow_nan=False)),
    arrays(np.float64, (3, 3), elements=st.floats(-1, 2, allow_nan=False)),
)
def test_obstacle_monotone(u, bump, C):
    np.fill_diagonal(C, 0.0)
    v = u + bump
    for i in range(3):
        assert np.all(obstacle(u, C, i) <= obstacle(v, C, i))


def test_closure_of_fields_is_pointwise():
    field = SwitchingCostField.from_matrix([[0, "1+x**2", 5], [9, 0, "0.5"], [9, 9, 0]])
    closed = triangle_closure(field)
    X = np.array([[0.0], [1.0], [2.0]])
    np.testing.assert_allclose(closed.entry(0, 2, X, 0.0), np.minimum(5.0, 1.5 + X[:, 0] ** 2))
    assert triangle_closure(closed) is closed
