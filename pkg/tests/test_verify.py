import json

import numpy as np
import pytest

from conftest import build, heat_dict, holder_dict, jump_two_mode_dict, switch_dict
from switchpide.model import ProblemSpec
from switchpide.solver import SolverConfig, solve
from switchpide.verify import (
    PerturbationPlan,
    PlanError,
    apply_plan,
    comparison_experiment,
    continuous_dependence_experiment,
    data_differences,
    holder_slope,
    regularity_experiment,
)

DELTA = 0.1


@pytest.fixture(scope="module")
def heat():
    return build(heat_dict(121, 81))


def test_source_shift_attains_bound_exactly(heat):
    rep = continuous_dependence_experiment(heat, PerturbationPlan(DELTA, {"f": "1"}))
    assert rep.sharp_only
    assert rep.sup_diff == pytest.approx(DELTA * heat.T, abs=1e-9)
    assert rep.sharp_bound == pytest.approx(DELTA * heat.T, abs=1e-12)
    assert rep.sup_uhat_minus_u == pytest.approx(rep.sup_diff)


def test_terminal_shift_propagates_unchanged(heat):
    rep = continuous_dependence_experiment(heat, PerturbationPlan(DELTA, {"g": "1"}))
    assert rep.sup_diff == pytest.approx(DELTA, abs=1e-9)


def test_identical_problems_agree(heat):
    rep = continuous_dependence_experiment(heat, PerturbationPlan(0.0, {"f": "1"}))
    assert rep.sup_diff <= 1e-12


def test_implied_constant_stable_under_refinement():
    plan = PerturbationPlan(DELTA, {"b": "1"})
    implied = []
    for nx, nt in ((61, 41), (121, 81)):
        rep = continuous_dependence_experiment(build(heat_dict(nx, nt)), plan)
        assert rep.c_terms == pytest.approx(DELTA)
        implied.append(rep.implied_C)
    assert abs(implied[1] / implied[0] - 1) <= 0.1


def test_data_differences_per_field():
    spec = build(jump_two_mode_dict())
    plan = PerturbationPlan(0.2, {"c0": "1", "nu": [1.0, 0.5], "costs": [[0, "1"], ["1", 0]]})
    other = apply_plan(spec, plan)
    d = data_differences(spec, other, np.linspace(-1, 1, 11)[:, None], np.array([0.0, 0.5]))
    assert d["c0"] == pytest.approx(0.2)
    assert d["costs"] == pytest.approx(0.2)
    assert d["jump_measure"] > 0
    assert d["g"] == d["f"] == d["b"] == d["sigma"] == d["jump_map"] == 0.0


def test_plan_round_trip_and_errors(tmp_path):
    plan = PerturbationPlan(0.5, {"g": ["1", "x"], "f": "0.2"})
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(plan.to_dict()))
    assert PerturbationPlan.from_file(path) == plan
    assert plan.which == ("f", "g")
    with pytest.raises(PlanError):
        PerturbationPlan(0.1, {"colour": "1"})
    with pytest.raises(PlanError):
        PerturbationPlan.from_dict({"directions": {}})


def test_invalid_perturbation_is_reported():
    spec = build(switch_dict())
    # pushes c_01 + c_10 below zero: (O1) fails
    with pytest.raises(PlanError, match="O1"):
        continuous_dependence_experiment(spec, PerturbationPlan(-1.0, {"costs": [[0, 1], [1, 0]]}))


def test_regularity_heat_is_lipschitz_in_time(heat):
    rep = regularity_experiment(heat)
    assert rep.slope == pytest.approx(1.0, abs=0.05)
    assert rep.passed


def test_regularity_two_mode():
    rep = regularity_experiment(build(switch_dict(nt=129)))
    assert rep.slope == pytest.approx(1.0, abs=0.05)
    assert max(rep.lipschitz) <= 1e-12


def test_regularity_jump_diffusion_reports_slope():
    rep = regularity_experiment(build(holder_dict(201, 129)))
    assert rep.slope >= 0.45
    assert len(rep.gaps) >= 4


def test_too_few_time_levels_is_an_error():
    r = solve(build(heat_dict(21, 9)))
    with pytest.raises(ValueError, match="dyadic"):
        holder_slope(r)


def test_comparison_terminal_lift():
    spec = build(jump_two_mode_dict())
    rep = comparison_experiment(spec, PerturbationPlan(DELTA, {"g": "1"}))
    assert rep.passed and rep.worst_violation <= 1e-8


def test_comparison_equal_problems():
    spec = build(jump_two_mode_dict())
    rep = comparison_experiment(spec, PerturbationPlan(0.0, {"g": "1"}))
    assert rep.worst_violation == 0.0


def test_comparison_rejects_unordered_or_other_fields():
    spec = build(jump_two_mode_dict())
    with pytest.raises(PlanError):
        comparison_experiment(spec, PerturbationPlan(-DELTA, {"g": "1"}))
    with pytest.raises(PlanError):
        comparison_experiment(spec, PerturbationPlan(DELTA, {"b": "1"}))


@pytest.mark.parametrize("tol", [1e-4, 1e-6, 1e-8])
def test_comparison_violation_within_obstacle_tolerance(tol):
    spec = build(jump_two_mode_dict())
    cfg = SolverConfig(grid=spec.grid(), obstacle_tol=tol)
    rep = comparison_experiment(spec, PerturbationPlan(1e-3, {"f": ["1", "0"]}), cfg, tol=tol)
    assert rep.worst_violation <= tol


def test_perturbed_spec_is_a_new_problem():
    spec = build(heat_dict(21, 11))
    other = apply_plan(spec, PerturbationPlan(0.5, {"sigma": "1"}))
    assert isinstance(other, ProblemSpec)
    a, *_ = other.modes[0].evaluate(np.zeros((1, 1)), 0.0)
    assert a[0, 0, 0] == pytest.approx(1.5**2)
