import math

import numpy as np
import pytest

from cble.fluctuation import (
    empirical_renewal,
    log_survival_weights,
    martingale_check,
    spitzer_rho,
    survival_exponent,
)
from cble.levy_env import AtomJumps, EnvPath, LevyTriplet, sample_path


def test_bridge_weight_two_point_path():
    path = EnvPath(np.array([0.0, 1.0]), np.array([-1.0, -1.0]))
    w = np.exp(log_survival_weights(path, 1.0))
    assert w[0] == 1.0
    assert w[1] == pytest.approx(1 - math.exp(-2.0), rel=1e-14)


def test_weights_without_diffusion_are_indicators():
    path = EnvPath(np.array([0.0, 1.0, 2.0, 3.0]), np.array([-1.0, -0.5, 0.2, -2.0]))
    w = np.exp(log_survival_weights(path, 0.0))
    np.testing.assert_array_equal(w, [1.0, 1.0, 0.0, 0.0])


def test_weights_see_jumps_over_the_level():
    # a jump from -1 to +0.5 and back kills survival even though both ends are below 0
    path = EnvPath(np.array([0.0, 0.5, 1.0]), np.array([-1.0, 0.5, -1.0]),
                   np.array([0.5]), np.array([1.5]))
    assert np.exp(log_survival_weights(path, 1.0))[-1] == 0.0


@pytest.mark.parametrize("t", [1.0, 4.0])
def test_brownian_survival_matches_reflection_principle(brownian, t):
    n = 4000
    vals = []
    for i in range(n):
        path = sample_path(brownian, -1.0, t, int(t / 0.05) + 1, 17, i)
        vals.append(math.exp(log_survival_weights(path, 1.0)[-1]))
    vals = np.array(vals)
    exact = math.erf(1 / math.sqrt(2 * t))
    assert abs(vals.mean() - exact) < 4 * vals.std(ddof=1) / math.sqrt(n)


def test_spitzer_index_symmetric_and_drifted(brownian):
    grid = np.linspace(0.0, 10.0, 1001)
    sym = spitzer_rho(brownian, grid, 2000, 1)
    assert abs(sym.mean - 0.5) < 4 * sym.se
    up = spitzer_rho(LevyTriplet(1.0, 1.0), grid, 500, 1)
    assert up.mean > 0.8


def test_spitzer_index_of_pure_drift_is_one():
    est = spitzer_rho(LevyTriplet(1.0, 0.0), np.linspace(0, 1, 11), 10, 0)
    assert est.mean == 1.0 and est.se == 0.0


def test_survival_exponent_brownian(brownian):
    fit = survival_exponent(brownian, -1.0, [4, 8, 16, 32, 64], 3000, 2)
    assert fit.slope == pytest.approx(-0.5, abs=0.1)
    assert not fit.dropped
    assert fit.prob == sorted(fit.prob, reverse=True)


def test_survival_exponent_requires_negative_start(brownian):
    with pytest.raises(ValueError):
        survival_exponent(brownian, 0.5, [1, 2], 10, 0)


def test_renewal_brownian_is_linear_with_skeleton_slope(brownian):
    dt = 1e-3
    table = empirical_renewal(brownian, "ascending", [0.001, 0.2, 0.4, 0.6, 0.8, 1.0], 60, 3, dt=dt)
    assert table.excluded == [0.001]
    assert table.fit["r2"] >= 0.99
    # the skeleton of Brownian motion has about sqrt(2 / dt) ladder points per unit height
    assert table.fit["slope"] == pytest.approx(math.sqrt(2 / dt), rel=0.1)
    assert table(0.0) == 1.0 and table(-1.0) == 0.0
    assert table(2.0) > table(1.0)


def test_renewal_direction_validated(brownian):
    with pytest.raises(ValueError):
        empirical_renewal(brownian, "sideways", [1.0], 2, 0)
    with pytest.raises(ValueError):
        empirical_renewal(brownian, "ascending", [1e-6], 2, 0)


def test_analytic_martingale_is_flat(brownian):
    rep = martingale_check(brownian, -1.0, [1, 2, 4, 8], 4000, 5)
    assert rep.u_mode == "analytic"
    assert rep.max_deviation_se < 4
    assert rep.mean[0] == pytest.approx(1.0, abs=4 * rep.se[0])


def test_martingale_mode_requirements():
    jumpy = LevyTriplet(0.0, 1.0, (AtomJumps(((1.0, 0.5),)),))
    with pytest.raises(ValueError):
        martingale_check(jumpy, -1.0, [1, 2], 10, 0)
    table = empirical_renewal(LevyTriplet(0.0, 1.0), "ascending", [0.5, 1.0], 4, 0, dt=1e-2)
    with pytest.raises(ValueError):
        martingale_check(LevyTriplet(0.0, 1.0), -1.0, [1, 2], 10, 0, dt=0.05, renewal=table)
    rep = martingale_check(LevyTriplet(0.0, 1.0), -1.0, [1, 2], 10, 0, dt=1e-2, renewal=table)
    assert rep.u_mode == "empirical"


def test_downward_drift_survival_plateaus():
    fit = survival_exponent(LevyTriplet(-1.0, 1.0), -1.0, [2, 4, 8, 16, 32], 2000, 3)
    assert fit.non_power_law
    assert fit.prob[-1] == pytest.approx(1 - math.exp(-2), abs=0.03)


def test_survival_slope_stable_under_doubling(brownian):
    a = survival_exponent(brownian, -1.0, [4, 8, 16, 32, 64], 2000, 4)
    b = survival_exponent(brownian, -1.0, [4, 8, 16, 32, 64], 4000, 4)
    assert abs(a.slope - b.slope) <= 1.96 * math.hypot(a.fit.slope_se, b.fit.slope_se)


def test_renewal_monotone_and_bound_stable(brownian):
    grid = [0.2, 0.4, 0.6, 0.8, 1.0]
    small = empirical_renewal(brownian, "ascending", grid, 30, 6, dt=1e-2)
    big = empirical_renewal(brownian, "ascending", grid, 60, 6, dt=1e-2)
    for table in (small, big):
        assert np.all(np.diff(table.U) >= 0)
        assert math.isfinite(table.fit["linear_bound_C1"])
    assert big.fit["linear_bound_C1"] == pytest.approx(small.fit["linear_bound_C1"], rel=0.15)


def test_upward_drift_martingale_statistic_decays():
    rep = martingale_check(LevyTriplet(1.0, 1.0), -1.0, [1, 2, 4, 8], 2000, 7)
    assert rep.mean == sorted(rep.mean, reverse=True)
    assert rep.max_deviation_se > 3


def test_martingale_verdict_stable_under_refinement(brownian):
    coarse = martingale_check(brownian, -1.0, [1, 2, 4], 2000, 8, dt=0.05)
    fine = martingale_check(brownian, -1.0, [1, 2, 4], 2000, 8, dt=0.025)
    assert coarse.max_deviation_se < 3 and fine.max_deviation_se < 3
