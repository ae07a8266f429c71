import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cble.estimates import McEstimate, combined_se, fit_rate


def test_mc_estimate_small_sample():
    est = McEstimate.from_samples([0.0, 1.0, 0.0, 1.0], seed=5)
    assert est.mean == 0.5
    assert est.se == pytest.approx(math.sqrt(1 / 12))
    assert est.ci95[0] < 0.5 < est.ci95[1]
    assert est.n == 4 and est.seed == 5


def test_constant_samples_have_zero_se():
    est = McEstimate.from_samples(np.full(10, 0.3))
    assert est.se == 0.0 and est.ci95 == (0.3, 0.3)


def test_needs_two_samples():
    with pytest.raises(ValueError):
        McEstimate.from_samples([1.0])


def test_json_roundtrip():
    import json
    est = McEstimate.from_samples([0.1, 0.2, 0.4])
    assert json.loads(est.to_json())["mean"] == pytest.approx(est.mean)


def test_combined_se():
    a = McEstimate(0.0, 0.3, (0, 0), 2)
    b = McEstimate(0.0, 0.4, (0, 0), 2)
    assert combined_se(a, b) == pytest.approx(0.5)


def test_ci_coverage():
    gen = np.random.default_rng(1)
    hits = 0
    for _ in range(1000):
        est = McEstimate.from_samples(gen.random(200) < 0.3)
        hits += est.ci95[0] <= 0.3 <= est.ci95[1]
    assert 0.93 <= hits / 1000 <= 0.97


@settings(max_examples=50, deadline=None)
@given(slope=st.floats(-3, 3), amp=st.floats(1e-3, 1e3))
def test_exact_power_law_recovered(slope, amp):
    t = np.array([4.0, 8, 16, 32, 64, 128, 256, 512])
    fit = fit_rate(t, amp * t**slope)
    assert fit.slope == pytest.approx(slope, abs=1e-9)
    assert math.exp(fit.intercept) == pytest.approx(amp, rel=1e-8)
    if abs(slope) > 1e-3:
        assert fit.r2 == pytest.approx(1.0, abs=1e-9)


def test_weighted_fit_downweights_noisy_point():
    t = np.array([1.0, 2, 4, 8])
    p = t**-0.5
    p_bad = p.copy()
    p_bad[-1] *= 3
    se = np.array([1e-4, 1e-4, 1e-4, 10.0])
    assert fit_rate(t, p_bad, se).slope == pytest.approx(-0.5, abs=1e-3)
    assert abs(fit_rate(t, p_bad).slope + 0.5) > 0.1


def test_fit_rate_rejects_nonpositive():
    with pytest.raises(ValueError):
        fit_rate([1, 2], [0.1, 0.0])


def test_constant_series_has_zero_slope():
    fit = fit_rate([1.0, 2, 4, 8], [0.2] * 4)
    assert fit.slope == 0.0 and fit.r2 == 1.0


def test_noisy_power_law_slope_within_two_se():
    gen = np.random.default_rng(12)
    t = 2.0 ** np.arange(2, 10)
    truth = 3 * t**-0.5
    se = 0.05 * truth
    hits = 0
    for _ in range(100):
        fit = fit_rate(t, truth + se * gen.standard_normal(t.size), se)
        hits += abs(fit.slope + 0.5) <= 2 * fit.slope_se
    assert hits >= 90
