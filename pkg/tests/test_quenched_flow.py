import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from cble.branching_mech import Exponential, Mechanism, Pareto, Stable
from cble.levy_env import LevyTriplet, constant_path, refine, sample_path
from cble.quenched_flow import (
    NonStabilizingError,
    bound_check,
    lambda_limit,
    nonexplosion_prob_given_env,
    quenched_laplace,
    solve_backward,
)

HALF = Mechanism.stable(-0.5, -1.0)
EXPO = Mechanism((Exponential(1.0, 1.0),))
MIXED = Mechanism((Stable(-0.5, -0.5), Exponential(1.0, 2.0)))


def _expo_zero_env(lam, tau, m=1.0, r=1.0):
    # dv/dtau = m v / (v + r)  =>  v - lam + r log(v / lam) = m tau
    g = lambda v: v - lam + r * math.log(v / lam) - m * tau
    return brentq(g, lam, lam + m * tau + 1.0, xtol=1e-15, rtol=1e-14)


def test_zero_path_stable_values():
    path = constant_path(0.0, 1.0)
    assert solve_backward(HALF, path, 1.0, 1.0).v0 == pytest.approx(2.25, rel=1e-14)
    assert solve_backward(HALF, path, 1.0, 0.0).v0 == pytest.approx(0.25, rel=1e-14)
    assert nonexplosion_prob_given_env(HALF, path, 1.0, 1.0) == pytest.approx(math.exp(-0.25), abs=1e-12)


@pytest.mark.parametrize("lam,t", [(0.1, 1.0), (1.0, 2.0), (10.0, 0.5), (1e-4, 3.0)])
def test_rk_on_zero_path_matches_implicit_solution(lam, t):
    sol = solve_backward(EXPO, constant_path(0.0, t, 7), t, lam)
    assert sol.method == "rk"
    assert sol.v0 == pytest.approx(_expo_zero_env(lam, t), rel=1e-8)


def test_constant_shift_scaling():
    # on xi = x: v(lam) = e^x * v_zero(lam e^{-x})
    x, lam, t = 1.3, 0.7, 1.5
    shifted = solve_backward(EXPO, constant_path(x, t), t, lam).v0
    assert shifted == pytest.approx(math.exp(x) * _expo_zero_env(lam * math.exp(-x), t), rel=1e-8)


@pytest.mark.parametrize("index", range(4))
@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_rk_matches_closed_form_on_random_paths(jumpy, index, lam):
    path = sample_path(jumpy, 0.0, 1.0, 1001, 7, index)
    rk = solve_backward(HALF, path, 1.0, lam, method="rk")
    closed = solve_backward(HALF, path, 1.0, lam, method="closed")
    np.testing.assert_allclose(rk.v_values, closed.v_values, rtol=1e-8)


def test_semigroup_property(brownian):
    path = sample_path(brownian, 0.0, 2.0, 401, 3)
    full = solve_backward(MIXED, path, 2.0, 0.5)
    k = 200
    s = float(path.times[k])
    partial = solve_backward(MIXED, path, s, float(full.v_values[k]))
    assert partial.v0 == pytest.approx(full.v0, rel=1e-8)


def test_grid_refinement_order(brownian):
    # successive refinements of the same path: differences shrink at least linearly in dt
    diffs = []
    paths = [sample_path(brownian, 0.0, 1.0, 65, 11, i) for i in range(20)]
    for level in range(5):
        vals = [solve_backward(EXPO, p, 1.0, 1.0).v0 for p in paths]
        paths = [refine(p, brownian.sigma, 100 + level) for p in paths]
        nxt = [solve_backward(EXPO, p, 1.0, 1.0).v0 for p in paths]
        diffs.append(np.mean(np.abs(np.subtract(vals, nxt))))
    orders = np.log2(np.asarray(diffs[:-1]) / np.asarray(diffs[1:]))
    assert np.mean(orders) >= 0.9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), lam=st.floats(1e-3, 1e3), ratio=st.floats(1.01, 10.0))
def test_monotone_in_lambda_and_time(seed, lam, ratio):
    path = sample_path(LevyTriplet(-0.2, 1.0), 0.0, 1.0, 201, seed)
    lo = solve_backward(MIXED, path, 1.0, lam)
    hi = solve_backward(MIXED, path, 1.0, lam * ratio)
    assert np.all(hi.v_values >= lo.v_values * (1 - 1e-10))
    # v grows as s runs backwards from t to 0
    assert np.all(np.diff(lo.v_values) <= 1e-10 * np.maximum(1.0, lo.v_values[1:]))


def test_lambda_limit_matches_closed_form(jumpy):
    path = sample_path(jumpy, 0.0, 1.0, 501, 5)
    limit = lambda_limit(HALF, path, 1.0)
    exact = solve_backward(HALF, path, 1.0, 0.0).v0
    assert limit.v0 == pytest.approx(exact, rel=1e-6)
    assert limit.lambdas[0] == 1.0


def test_lambda_limit_raises_when_not_stabilized(brownian):
    path = sample_path(brownian, 0.0, 1.0, 101, 5)
    with pytest.raises(NonStabilizingError) as exc:
        lambda_limit(HALF, path, 1.0, k_max=3)
    assert len(exc.value.sequence) == 4


@pytest.mark.parametrize("mech", [EXPO, Mechanism((Pareto(1.0),))])
def test_conservative_mechanisms_never_explode(brownian, mech):
    path = sample_path(brownian, 0.0, 1.0, 101, 5)
    sol = solve_backward(mech, path, 1.0, 0.0)
    assert sol.method == "conservative-zero"
    assert sol.v0 == 0.0
    assert nonexplosion_prob_given_env(mech, path, 2.0, 1.0) == 1.0


def test_mixed_mechanism_explodes_with_positive_probability(brownian):
    path = sample_path(brownian, 0.0, 1.0, 201, 5)
    sol = solve_backward(MIXED, path, 1.0, 0.0)
    assert sol.method == "lambda-limit"
    p = nonexplosion_prob_given_env(MIXED, path, 1.0, 1.0)
    assert 0.0 < p < 1.0
    assert p == pytest.approx(math.exp(-sol.v0), rel=1e-6)


def test_custom_tail_route_matches_compiled_route(brownian):
    custom = Mechanism.from_tail(lambda y: math.exp(-y), head=lambda x: -math.expm1(-x))
    path = sample_path(brownian, 0.0, 0.5, 21, 9)
    a = solve_backward(custom, path, 0.5, 1.0).v0
    b = solve_backward(EXPO, path, 0.5, 1.0).v0
    assert a == pytest.approx(b, rel=1e-7)


def test_quenched_laplace_shift(brownian):
    path = sample_path(brownian, 0.0, 1.0, 101, 2)
    x, lam = 0.4, 2.0
    v = solve_backward(HALF, path.shifted(x), 1.0, lam * math.exp(-x)).v0
    assert quenched_laplace(HALF, path, 1.5, x, lam, 1.0) == pytest.approx(math.exp(-1.5 * v), rel=1e-14)


def test_bounds_hold_for_stable_and_general_mechanisms(jumpy):
    for i in range(5):
        path = sample_path(jumpy, 0.0, 1.0, 501, 21, i)
        assert bound_check(HALF, path, 1.0, 1.0, stable_params=(-0.5, -1.0)).ok
        assert bound_check(MIXED, path, 1.0, 1.0).ok


def test_argument_validation(brownian):
    path = sample_path(brownian, 0.0, 1.0, 11, 1)
    with pytest.raises(ValueError):
        solve_backward(HALF, path, 1.0, -1.0)
    with pytest.raises(ValueError):
        solve_backward(HALF, path, 2.0, 1.0)
    with pytest.raises(ValueError):
        solve_backward(EXPO, path, 1.0, 1.0, method="closed")
    with pytest.raises(ValueError):
        nonexplosion_prob_given_env(HALF, path, 0.0, 1.0)


def test_solution_csv_roundtrip(tmp_path, brownian):
    sol = solve_backward(EXPO, sample_path(brownian, 0.0, 1.0, 11, 1), 1.0, 1.0)
    sol.to_csv(tmp_path / "q.csv")
    data = np.loadtxt(tmp_path / "q.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1], sol.v_values)
    assert sol.diagnostics["rejected_steps"] >= 0


def test_lambda_limit_agrees_with_fast_path_on_many_paths(brownian):
    worst = 0.0
    for i in range(100):
        path = sample_path(brownian, 0.0, 1.0, 101, 61, i)
        fast = solve_backward(HALF, path, 1.0, 0.0).v0
        worst = max(worst, abs(lambda_limit(HALF, path, 1.0).v0 - fast) / fast)
    assert worst <= 1e-4


def test_quenched_laplace_without_shift(brownian):
    path = sample_path(brownian, 0.0, 1.0, 101, 2)
    v = solve_backward(MIXED, path, 1.0, 0.3).v0
    assert quenched_laplace(MIXED, path, 2.0, 0.0, 0.3, 1.0) == pytest.approx(math.exp(-2 * v))


def test_stable_lower_bound_is_tight(jumpy):
    rep = bound_check(HALF, sample_path(jumpy, 0.0, 1.0, 501, 3), 1.0, 1.0, stable_params=(-0.5, -1.0))
    assert rep.lower_slack == pytest.approx(0.0, abs=1e-10 * rep.lower)


def test_atoms_upper_bound_has_slack_on_zero_path():
    rep = bound_check(Mechanism.atoms([(1.0, 1.0)]), constant_path(0.0, 1.0), 1.0, 1.0)
    assert rep.upper_slack > 0
