import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cble.levy_env import (AtomJumps, DoubleExponentialJumps, LevyTriplet, constant_path,
                           env_from_sde_params, first_passage_above, first_passage_below,
                           increments, refine, running_extrema, sample_path)
from cble import rng as rngmod


def test_env_from_sde_params_examples():
    assert env_from_sde_params(0, 0, 0).drift == 0
    assert env_from_sde_params(0, 0, 1).drift == pytest.approx(-0.5, abs=1e-15)
    tri = env_from_sde_params(0, 0, 0, (AtomJumps(((1.0, math.log(2)),)),))
    assert tri.drift == pytest.approx(-(1 - math.log(2)), abs=1e-14)
    assert tri.drift == pytest.approx(-0.30685, abs=1e-5)


def test_env_from_sde_params_rejects_bad_input():
    with pytest.raises(ValueError):
        env_from_sde_params(0, -1, 0)
    with pytest.raises(ValueError):
        env_from_sde_params(0, 0, -1)


def test_double_exponential_compensator_matches_quadrature():
    import mpmath as mp
    j = DoubleExponentialJumps(0.5, 3.0, 0.7, 2.0)
    up = mp.quad(lambda z: (mp.e**z - 1 - z) * 0.5 * 3 * mp.e**(-3 * z), [0, 1])
    down = mp.quad(lambda z: (mp.e**z - 1 - z) * 0.7 * 2 * mp.e**(2 * z), [-1, 0])
    assert j.exp_compensator() == pytest.approx(float(up + down), rel=1e-10)
    small = mp.quad(lambda z: z * 0.5 * 3 * mp.e**(-3 * z), [0, 1]) + \
        mp.quad(lambda z: z * 0.7 * 2 * mp.e**(2 * z), [-1, 0])
    assert j.small_jump_mean() == pytest.approx(float(small), rel=1e-10)


def test_triplet_json_roundtrip(jumpy):
    assert LevyTriplet.from_dict(jumpy.to_dict()) == jumpy


def test_zero_triplet_path_is_zero():
    p = sample_path(LevyTriplet(), 0.0, 3.0, 50, seed=1)
    assert np.all(p.values == 0)


def test_deterministic_drift_endpoint():
    p = sample_path(LevyTriplet(drift=1.0), 0.0, 2.0, 101, seed=1)
    assert p.values[-1] == pytest.approx(2.0, abs=1e-13)


def test_start_value_and_grid_contains_jumps(jumpy):
    p = sample_path(jumpy, -0.7, 5.0, 100, seed=3)
    assert p.values[0] == -0.7
    assert np.all(np.diff(p.times) > 0)
    assert p.jump_times.size > 0
    assert np.all(np.isin(p.jump_times, p.times))


def test_gaussian_moments(brownian):
    ends = np.array([sample_path(brownian, 0.0, 1.0, 11, seed=5, index=i).values[-1]
                     for i in range(10_000)])
    assert abs(ends.mean()) < 3 / math.sqrt(10_000)
    assert abs(ends.var(ddof=1) - 1) < 0.05


def test_determinism(jumpy):
    a = sample_path(jumpy, 0.0, 4.0, 300, seed=11, index=7)
    b = sample_path(jumpy, 0.0, 4.0, 300, seed=11, index=7)
    assert a.times.tobytes() == b.times.tobytes()
    assert a.values.tobytes() == b.values.tobytes()


def test_jump_configuration_independent_of_grid(jumpy):
    a = sample_path(jumpy, 0.0, 4.0, 50, seed=11, index=2)
    b = sample_path(jumpy, 0.0, 4.0, 500, seed=11, index=2)
    assert np.array_equal(a.jump_times, b.jump_times)


def test_jump_count_is_poisson():
    rate, T = 2.0, 1.5
    tri = LevyTriplet(0.0, 0.0, (AtomJumps(((rate, 1.0),)),))
    counts = np.array([sample_path(tri, 0.0, T, 2, seed=9, index=i).jump_times.size
                       for i in range(10_000)])
    top = 10
    observed = np.array([np.sum(counts == k) for k in range(top)] + [np.sum(counts >= top)])
    pmf = stats.poisson.pmf(np.arange(top), rate * T)
    expected = 10_000 * np.append(pmf, 1 - pmf.sum())
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_running_extrema_brute_force(jumpy):
    p = sample_path(jumpy, 0.0, 3.0, 200, seed=2)
    sup, inf = running_extrema(p)
    for i in range(p.values.size):
        assert sup[i] == max(p.values[: i + 1])
        assert inf[i] == min(p.values[: i + 1])


def test_running_extrema_simple_cases():
    sup, inf = running_extrema(constant_path(0.0, 1.0, 5))
    assert np.all(sup == 0) and np.all(inf == 0)
    p = sample_path(LevyTriplet(drift=1.0), 0.0, 1.0, 20, seed=0)
    sup, inf = running_extrema(p)
    assert np.array_equal(sup, p.values)
    assert np.all(inf == 0)


def test_first_passage_examples(jumpy):
    p = sample_path(LevyTriplet(drift=-1.0), 0.0, 2.0, 201, seed=0)
    assert abs(first_passage_below(p, -0.5) - 0.5) <= 0.01 + 1e-12
    assert first_passage_below(p, -5.0) is None
    q = sample_path(jumpy, 0.0, 5.0, 300, seed=4)
    for level in (-0.5, -1.0, 0.5):
        scan = next((t for t, v in zip(q.times, q.values) if v <= level), None)
        assert first_passage_below(q, level) == scan
        scan_up = next((t for t, v in zip(q.times, q.values) if v >= level), None)
        assert first_passage_above(q, level) == scan_up


def _exact_integral_sigma0(path, drift, beta):
    # between stored points the sigma=0 path moves linearly with slope `drift`
    total = 0.0
    t, x = path.times, path.values
    jump_at = np.zeros(t.size)
    np.add.at(jump_at, np.searchsorted(t, path.jump_times), path.jump_sizes)
    for i in range(t.size - 1):
        dt = t[i + 1] - t[i]
        total += math.exp(-beta * x[i]) * (-math.expm1(-beta * drift * dt)) / (beta * drift)
    return total


def test_refinement_order_for_sigma_zero_paths():
    tri = LevyTriplet(0.7, 0.0, (AtomJumps(((1.0, -0.4), (1.0, 0.3))),))
    beta = -0.8
    errs = []
    for n in (101, 201, 401, 801):
        p = sample_path(tri, 0.0, 2.0, n, seed=3)
        xs, w = p.segments(2.0)
        approx = float(np.sum(np.exp(-beta * xs) * w))
        errs.append(abs(approx - _exact_integral_sigma0(p, 0.7, beta)))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 0.9


def test_refine_keeps_points_and_jumps(jumpy):
    p = sample_path(jumpy, 0.0, 1.0, 30, seed=8)
    r = refine(p, jumpy.sigma, seed=1)
    assert np.array_equal(r.times[0::2], p.times)
    assert np.array_equal(r.values[0::2], p.values)
    assert np.all(np.isin(p.jump_times, r.times))


def test_segments_cover_partial_horizon(jumpy):
    p = sample_path(jumpy, 0.0, 2.0, 21, seed=8)
    xs, w = p.segments(1.234)
    assert w.sum() == pytest.approx(1.234, abs=1e-14)
    assert np.all(w > 0)
    with pytest.raises(ValueError):
        p.segments(3.0)


def test_increments_mean(jumpy):
    gen = rngmod.substream(1, rngmod.HARNESS, 0)
    x = increments(jumpy, 0.1, 200_000, gen)
    assert abs(x.mean() - 0.1 * jumpy.mean) < 4 * x.std() / math.sqrt(x.size)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), index=st.integers(0, 1000))
def test_substreams_reproducible(seed, index):
    a = rngmod.substream(seed, 1, index).standard_normal(4)
    b = rngmod.substream(seed, 1, index).standard_normal(4)
    c = rngmod.substream(seed, 1, index + 1).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
