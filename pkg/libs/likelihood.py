"""
Gaussian likelihood on square-root transformed counts with diagonal covariance.

For a window of T days::

    log l = -T/2 log(2 pi) - sum_t log(sigma_t) - sum_t (sqrt(y_t) - sqrt(eta_t))^2 / (2 sigma_t^2)
"""
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class LikelihoodError(ValueError):
    pass


@dataclass(frozen=True)
class LikelihoodSpec:
    sigma: object = 1.0

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.size == 0 or not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
            raise LikelihoodError('sigma must be positive, got {0!r}'.format(self.sigma))

    def sigmas(self, length):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 0:
            return np.full(length, float(sigma))
        if sigma.shape != (length,):
            raise LikelihoodError('sigma has {0} entries for a {1}-day slice'.format(sigma.size, length))
        return sigma


@dataclass
class ObservationSeries:
    """Reported daily counts starting at ``first_day``; deaths optional."""
    cases: np.ndarray
    deaths: np.ndarray = None
    first_day: int = 1

    def __post_init__(self):
        self.cases = _as_counts(self.cases, 'observed cases')
        if self.deaths is not None:
            self.deaths = _as_counts(self.deaths, 'observed deaths')
            if len(self.deaths) != len(self.cases):
                raise LikelihoodError('Case and death series differ in length')

    @property
    def last_day(self):
        return self.first_day + len(self.cases) - 1

    @property
    def days(self):
        return np.arange(self.first_day, self.last_day + 1)

    def window(self, start_day, end_day):
        """Slice covering days ``start_day..end_day`` inclusive."""
        if start_day > end_day:
            raise LikelihoodError('Empty observation window {0}..{1}'.format(start_day, end_day))
        if start_day < self.first_day or end_day > self.last_day:
            raise LikelihoodError('Window {0}..{1} outside observed days {2}..{3}'.format(
                start_day, end_day, self.first_day, self.last_day))
        lo, hi = start_day - self.first_day, end_day - self.first_day + 1
        deaths = None if self.deaths is None else self.deaths[lo:hi]
        return ObservationSeries(cases=self.cases[lo:hi], deaths=deaths, first_day=start_day)


def _as_counts(values, name):
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = values.reshape(1)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise LikelihoodError('{0} must be finite and nonnegative'.format(name))
    return values


def window_log_likelihood(obs, sim_obs, spec=None):
    spec = spec or LikelihoodSpec()
    obs = _as_counts(obs, 'observations')
    sim_obs = _as_counts(sim_obs, 'simulated observations')
    if len(obs) != len(sim_obs):
        raise LikelihoodError('Length mismatch: {0} observed vs {1} simulated days'.format(len(obs), len(sim_obs)))
    if len(obs) == 0:
        raise LikelihoodError('Empty window')
    sigma = spec.sigmas(len(obs))
    residual = np.sqrt(obs) - np.sqrt(sim_obs)
    return float(-0.5 * len(obs) * LOG_2PI - np.sum(np.log(sigma)) - np.sum(residual ** 2 / (2.0 * sigma ** 2)))


def batch_log_likelihood(obs, sim_obs, spec=None):
    """Row-wise window_log_likelihood for an (n_particles, T) matrix."""
    spec = spec or LikelihoodSpec()
    obs = _as_counts(obs, 'observations')
    sim_obs = np.asarray(sim_obs, dtype=float)
    if sim_obs.ndim != 2 or sim_obs.shape[1] != len(obs):
        raise LikelihoodError('Simulated matrix {0} does not match {1} observed days'.format(sim_obs.shape, len(obs)))
    if len(obs) == 0:
        raise LikelihoodError('Empty window')
    if sim_obs.size and np.any(sim_obs < 0):
        raise LikelihoodError('simulated observations must be nonnegative')
    sigma = spec.sigmas(len(obs))
    residual = np.sqrt(obs)[None, :] - np.sqrt(sim_obs)
    norm = -0.5 * len(obs) * LOG_2PI - np.sum(np.log(sigma))
    return norm - np.sum(residual ** 2 / (2.0 * sigma ** 2)[None, :], axis=1)


def joint_log_likelihood(obs_cases, obs_deaths, sim_obs_cases, sim_deaths, spec_c=None, spec_d=None):
    """Cases term plus, when deaths are observed, a term on raw simulated deaths."""
    value = window_log_likelihood(obs_cases, sim_obs_cases, spec_c)
    if obs_deaths is None:
        return value
    if sim_deaths is None:
        raise LikelihoodError('Observed deaths given without simulated deaths')
    return value + window_log_likelihood(obs_deaths, sim_deaths, spec_d)


def batch_joint_log_likelihood(obs_cases, obs_deaths, sim_obs_cases, sim_deaths, spec_c=None, spec_d=None):
    value = batch_log_likelihood(obs_cases, sim_obs_cases, spec_c)
    if obs_deaths is None:
        return value
    return value + batch_log_likelihood(obs_deaths, sim_deaths, spec_d)
