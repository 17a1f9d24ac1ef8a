import math

import numpy as np
import pytest

from libs.likelihood import (LOG_2PI, LikelihoodError, LikelihoodSpec, ObservationSeries, batch_joint_log_likelihood,
                             batch_log_likelihood, joint_log_likelihood, window_log_likelihood)


def test_perfect_fit_is_normalizing_constant():
    obs = np.array([0, 4, 9, 16, 25])
    assert window_log_likelihood(obs, obs) == pytest.approx(-0.5 * 5 * LOG_2PI, abs=1e-12)


def test_closer_simulation_scores_higher():
    obs = np.array([10, 20, 30])
    near = window_log_likelihood(obs, [11, 19, 30])
    far = window_log_likelihood(obs, [40, 2, 90])
    assert near > far


def test_known_residual():
    # sqrt residuals of 1 on each of 2 days
    value = window_log_likelihood([4, 9], [1, 4], LikelihoodSpec(sigma=2.0))
    expected = -LOG_2PI - 2 * np.log(2.0) - 2 * (1.0 / 8.0)
    assert value == pytest.approx(expected)


def test_per_day_sigma():
    spec = LikelihoodSpec(sigma=[1.0, 2.0])
    value = window_log_likelihood([4, 9], [1, 4], spec)
    expected = -LOG_2PI - np.log(2.0) - 0.5 - 0.125
    assert value == pytest.approx(expected)
    with pytest.raises(LikelihoodError):
        window_log_likelihood([1, 2, 3], [1, 2, 3], spec)


def test_zero_observations_are_valid():
    assert np.isfinite(window_log_likelihood([0, 0, 0], [0, 5, 0]))


@pytest.mark.parametrize('obs,sim', [
    ([1, 2], [1, 2, 3]),
    ([], []),
    ([1, -1], [1, 1]),
    ([1, 1], [1, np.nan]),
])
def test_invalid_inputs(obs, sim):
    with pytest.raises(LikelihoodError):
        window_log_likelihood(obs, sim)


@pytest.mark.parametrize('sigma', [0.0, -1.0, float('inf'), []])
def test_invalid_sigma(sigma):
    with pytest.raises(LikelihoodError):
        LikelihoodSpec(sigma=sigma)


def test_batch_matches_rows():
    rng = np.random.default_rng(5)
    obs = rng.integers(0, 50, size=14)
    sims = rng.integers(0, 50, size=(30, 14))
    batch = batch_log_likelihood(obs, sims, LikelihoodSpec(1.5))
    for row, value in zip(sims, batch):
        assert value == pytest.approx(window_log_likelihood(obs, row, LikelihoodSpec(1.5)))


def test_joint_adds_death_term():
    cases, deaths = np.array([5, 8, 13]), np.array([0, 1, 1])
    sim_cases, sim_deaths = np.array([6, 8, 11]), np.array([1, 1, 0])
    joint = joint_log_likelihood(cases, deaths, sim_cases, sim_deaths)
    assert joint == pytest.approx(window_log_likelihood(cases, sim_cases) + window_log_likelihood(deaths, sim_deaths))
    assert joint_log_likelihood(cases, None, sim_cases, None) == window_log_likelihood(cases, sim_cases)
    with pytest.raises(LikelihoodError):
        joint_log_likelihood(cases, deaths, sim_cases, None)
    batch = batch_joint_log_likelihood(cases, deaths, sim_cases[None, :], sim_deaths[None, :])
    assert batch[0] == pytest.approx(joint)


def test_observation_window():
    series = ObservationSeries(cases=np.arange(10), deaths=np.zeros(10), first_day=5)
    assert series.last_day == 14
    part = series.window(7, 9)
    np.testing.assert_array_equal(part.cases, [2, 3, 4])
    assert part.first_day == 7
    assert len(part.deaths) == 3
    with pytest.raises(LikelihoodError):
        series.window(3, 9)
    with pytest.raises(LikelihoodError):
        series.window(9, 8)
    with pytest.raises(LikelihoodError):
        ObservationSeries(cases=[1, 2], deaths=[1])


def _reference(obs, sim, sigma):
    total = 0.0
    for y, eta in zip(obs, sim):
        residual = math.sqrt(y) - math.sqrt(eta)
        total += -0.5 * math.log(2 * math.pi) - math.log(sigma) - residual * residual / (2 * sigma * sigma)
    return total


def test_matches_reference_density_on_random_slices():
    rng = np.random.default_rng(17)
    for _ in range(1000):
        length = int(rng.integers(1, 30))
        obs = rng.integers(0, 60, size=length)
        sim = rng.integers(0, 60, size=length)
        sigma = float(rng.uniform(0.3, 3.0))
        value = window_log_likelihood(obs, sim, LikelihoodSpec(sigma))
        assert value == pytest.approx(_reference(obs, sim, sigma), rel=1e-12, abs=1e-12)
