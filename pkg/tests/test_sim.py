from __future__ import annotations

import math

import numpy as np
import pytest

from ctmcfilter.ctmc import CtmcPath
from ctmcfilter.errors import InvalidTime, OutOfRange, UnknownPreset
from ctmcfilter.model import ModelSpec
from ctmcfilter.sim import (
    ObservationSeries,
    Scenario,
    integrate_path,
    preset,
    read_observations_csv,
    sample_integral_batch,
    simulate_observations,
    write_observations_csv,
)


def test_integral_of_constant_path():
    path = CtmcPath(np.array([]), np.array([1]), 3.0)
    assert integrate_path(path, [-3.0, 1.0], 2.5) == pytest.approx(2.5)


def test_integral_with_one_jump_at_midpoint():
    t = 0.8
    path = CtmcPath(np.array([t / 2]), np.array([0, 1]), t)
    assert integrate_path(path, [-3.0, 1.0], t) == pytest.approx(-t)


def test_integral_is_piecewise_linear_with_state_slopes():
    path = CtmcPath(np.array([0.3, 1.1, 1.7]), np.array([0, 1, 0, 1]), 2.0)
    alpha = np.array([-3.0, 1.0])
    for a, b, s in ((0.0, 0.3, 0), (0.3, 1.1, 1), (1.1, 1.7, 0), (1.7, 2.0, 1)):
        t = np.linspace(a, b, 5)[1:-1]
        slope = np.diff(integrate_path(path, alpha, t)) / np.diff(t)
        np.testing.assert_allclose(slope, alpha[s], atol=1e-12)
    with pytest.raises(OutOfRange):
        integrate_path(path, alpha, 2.5)
    with pytest.raises(OutOfRange):
        integrate_path(path, alpha, -0.1)


def test_simulation_without_noise_reproduces_integral(two_state):
    m = ModelSpec.from_arrays(two_state.alpha, two_state.q, two_state.p0, 1e-12)
    obs = simulate_observations(Scenario(m, 20.0, 100, 3))
    np.testing.assert_allclose(obs.increments, np.diff(obs.true_J), atol=1e-9)
    np.testing.assert_allclose(obs.true_J, integrate_path(obs.path, m.alpha, obs.times), atol=1e-12)


def test_noise_variance_chi_square(two_state):
    m = ModelSpec.from_arrays(two_state.alpha, two_state.q, two_state.p0, 1.7)
    n = 100_000
    obs = simulate_observations(Scenario(m, 1000.0, n, 8))
    resid = (obs.increments - np.diff(obs.true_J)) / math.sqrt(obs.h)
    var = resid.var(ddof=1)
    se = 1.7**2 * math.sqrt(2.0 / (n - 1))
    assert abs(var - 1.7**2) < 3 * se
    # conditional independence: lag-one autocorrelation of residuals
    r = resid - resid.mean()
    assert abs(np.dot(r[1:], r[:-1]) / np.dot(r, r)) < 3 / math.sqrt(n)


def test_same_seed_same_series(two_state):
    a = simulate_observations(Scenario(two_state, 20.0, 100, 42))
    b = simulate_observations(Scenario(two_state, 20.0, 100, 42))
    np.testing.assert_array_equal(a.increments, b.increments)
    c = simulate_observations(Scenario(two_state, 20.0, 100, 43))
    assert not np.array_equal(a.increments, c.increments)


def test_cumulative_consistent():
    obs = ObservationSeries(0.5, [0.1, -0.2, 0.3])
    np.testing.assert_allclose(obs.cumulative, [0.0, 0.1, -0.1, 0.2], atol=1e-12)
    np.testing.assert_allclose(obs.times, [0.0, 0.5, 1.0, 1.5])


def test_striding_sums_blocks(two_state):
    obs = simulate_observations(Scenario(two_state, 20.0, 100, 1))
    s = obs.strided(5)
    assert s.n == 20 and s.h == pytest.approx(1.0)
    np.testing.assert_allclose(s.cumulative, obs.cumulative[::5], atol=1e-12)
    np.testing.assert_array_equal(s.true_states, obs.true_states[::5])
    with pytest.raises(ValueError):
        obs.strided(0)


def test_presets():
    two = preset("two-state")
    np.testing.assert_array_equal(two.model.alpha, [-3.0, 1.0])
    np.testing.assert_allclose(two.model.q.sum(axis=1), 0.0)
    assert two.n_obs * two.h == pytest.approx(two.T)
    assert (two.T, two.n_obs, two.seed) == (20.0, 100, 42)
    five = preset("five-state")
    assert five.model.q[2, 3] == 0.4 and five.model.q[4, 3] == 0.5
    np.testing.assert_allclose(five.model.q.sum(axis=1), 0.0, atol=1e-15)
    np.testing.assert_allclose(five.model.p0, [0.1, 0.3, 0.3, 0.2, 0.1], atol=1e-15)
    assert (five.T, five.n_obs) == (5.0, 50)
    assert preset("five-state", sigma=2.0).model.sigma == 2.0
    with pytest.raises(UnknownPreset):
        preset("three-state")


def test_scenario_validation(two_state):
    with pytest.raises(ValueError):
        Scenario(two_state, 0.0, 10)
    with pytest.raises(ValueError):
        Scenario(two_state, 1.0, 0)


def test_batch_sampler_end_state_frequencies(two_state):
    h = 0.2
    rng = np.random.default_rng(9)
    P = np.array([[0.6 + 0.4 * math.exp(-1), 0.4 - 0.4 * math.exp(-1)],
                  [0.6 - 0.6 * math.exp(-1), 0.4 + 0.6 * math.exp(-1)]])
    for i in range(2):
        J, end, jumps = sample_integral_batch(two_state, i, h, 100_000, rng)
        p = P[i, 1 - i]
        se = math.sqrt(p * (1 - p) / J.size)
        assert abs(np.mean(end != i) - p) < 4 * se
        assert np.all((J >= -3 * h - 1e-12) & (J <= h + 1e-12))
        assert np.all((jumps % 2 == 1) == (end != i))
    with pytest.raises(InvalidTime):
        sample_integral_batch(two_state, 0, 0.0, 10)


def test_csv_roundtrip(tmp_path, two_state):
    obs = simulate_observations(Scenario(two_state, 20.0, 100, 42))
    path = tmp_path / "obs.csv"
    write_observations_csv(path, obs, truth=True)
    header = path.read_text().splitlines()[0]
    assert header == "k,t,dZ,Z,true_state,true_J"
    back = read_observations_csv(path)
    assert back.h == pytest.approx(0.2)
    np.testing.assert_array_equal(back.increments, obs.increments)
    np.testing.assert_array_equal(back.true_states[1:], obs.true_states[1:])
    assert back.true_states[0] == -1
    write_observations_csv(tmp_path / "plain.csv", obs)
    assert read_observations_csv(tmp_path / "plain.csv").true_states is None
