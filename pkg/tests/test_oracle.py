import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import build, switch_dict
from switchpide.oracle import DPOracleConfig, MCOracleConfig, OracleError, dp_oracle, mc_oracle


def one_mode(mode, terminal, jumps=None):
    d = {"dims": {"n": 1, "m": 1, "T": 1.0}, "p": 2, "K": 4, "modes": [mode], "costs": [[0]], "terminal": [terminal]}
    if jumps:
        d["jumps"] = [jumps]
    return build(d)


def test_dp_two_mode_switching():
    np.testing.assert_allclose(dp_oracle(build(switch_dict()), [0.0]), [0.4, 1.0], atol=1e-12)


def test_dp_free_switching_takes_best_source():
    np.testing.assert_allclose(dp_oracle(build(switch_dict(cost=0.0)), [0.3]), [1.0, 1.0], atol=1e-12)


def test_dp_single_mode_source():
    assert dp_oracle(one_mode({"f": 0.7}, "0"), [1.0])[0] == pytest.approx(0.7, abs=1e-12)


def test_dp_with_drift_and_discount_matches_closed_form():
    # x' = 1 from x0 = 0, reward e^{-t} * x(T)^2 at T = 1 with c0 = 1
    spec = one_mode({"b": 1, "c0": 1}, "x**2")
    assert dp_oracle(spec, [0.0], DPOracleConfig(nt_coarse=2, substeps=64))[0] == pytest.approx(math.exp(-1), rel=1e-9)


@settings(max_examples=15)
@given(st.floats(0.05, 1.0), st.floats(0.0, 0.5), st.integers(0, 1), st.integers(0, 1))
def test_dp_nonincreasing_in_costs(c, extra, i, j):
    if i == j:
        j = 1 - i
    costs = [[0, c], [c, 0]]
    base = dp_oracle(build(dict(switch_dict(), costs=costs)), [0.0], DPOracleConfig(nt_coarse=6))
    costs[i][j] += extra
    more = dp_oracle(build(dict(switch_dict(), costs=costs)), [0.0], DPOracleConfig(nt_coarse=6))
    assert np.all(more <= base + 1e-12)


def test_dp_rejects_diffusion():
    with pytest.raises(OracleError):
        dp_oracle(one_mode({"sigma": 1}, "0"), [0.0])


def test_mc_heat_second_moment_pins_generator_convention():
    r = mc_oracle(one_mode({"sigma": 1}, "x**2"), [0.0], cfg=MCOracleConfig(paths=40_000, seed=0))
    assert abs(r.estimate - 2.0) <= 3 * r.se


def test_mc_compound_poisson_mean():
    spec = one_mode({}, "x", {"kind": "finite-atoms", "atoms": [2.0], "weights": [0.5]})
    r = mc_oracle(spec, [0.0], cfg=MCOracleConfig(paths=40_000, seed=1))
    assert abs(r.estimate - 1.0) <= 3 * r.se


def test_mc_deterministic_source_has_zero_variance():
    r = mc_oracle(one_mode({"f": 0.25}, "0"), [0.0], cfg=MCOracleConfig(paths=1000, batch=500))
    assert r.estimate == pytest.approx(0.25, abs=1e-12)
    assert r.se == pytest.approx(0.0, abs=1e-12)


def test_mc_reproducible_and_thread_independent():
    spec = one_mode({"sigma": 1}, "x**2", {"kind": "compound-poisson-gaussian", "intensity": 1.0, "mean": 0.3, "std": 0.5})
    cfg = MCOracleConfig(paths=6000, batch=1500, seed=7)
    a = mc_oracle(spec, [0.0], cfg=cfg)
    b = mc_oracle(spec, [0.0], cfg=cfg)
    c = mc_oracle(spec, [0.0], cfg=MCOracleConfig(paths=6000, batch=1500, seed=7, threads=3))
    assert a.estimate == b.estimate == c.estimate
    assert a.se == b.se == c.se


def test_mc_standard_error_scales_with_paths():
    spec = one_mode({"sigma": 1}, "x**2")
    small = mc_oracle(spec, [0.0], cfg=MCOracleConfig(paths=20_000, seed=0))
    big = mc_oracle(spec, [0.0], cfg=MCOracleConfig(paths=40_000, seed=0))
    ratio = small.se / big.se
    assert abs(ratio / math.sqrt(2) - 1) <= 0.2


def test_mc_antithetic_runs():
    r = mc_oracle(one_mode({"sigma": 1}, "x**2"), [0.0], cfg=MCOracleConfig(paths=20_000, antithetic=True))
    assert abs(r.estimate - 2.0) <= 3 * r.se + 1e-2


def test_mc_rejects_infinite_activity_and_multi_mode():
    stable = one_mode({}, "x", {"kind": "truncated-stable", "alpha": 0.5, "tempering": 1.0})
    with pytest.raises(OracleError):
        mc_oracle(stable, [0.0])
    with pytest.raises(OracleError):
        mc_oracle(build(switch_dict()), [0.0])
