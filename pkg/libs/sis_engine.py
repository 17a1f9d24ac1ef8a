#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Windowed sequential importance sampling over (theta, seed, rho).

Window 1 samples (theta, rho) from the prior and crosses every pair with a
shared pool of replicate seeds. Each later window restores the resampled
particles of the previous window from their checkpoints, jitters theta and
rho, and draws a fresh seed pool. Because proposals equal the incremental
prior and ancestors carry equal weights after resampling, the weight of a
particle is its likelihood over the current window.

Every random draw comes from a stream derived from
(master seed, window, particle id, purpose), so results do not depend on
evaluation order.
"""
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from libs.bias_model import thin_series
from libs.constants import (RESAMPLE_MULTINOMIAL, RESAMPLE_SYSTEMATIC, SERIES_DEATHS, SERIES_REPORTED,
                            SERIES_TRUE, STREAM_JITTER, STREAM_PRIOR,
                            STREAM_RESAMPLE, STREAM_SEED_POOL, STREAM_THIN)
from libs.ensemble import CheckpointStore, RunManifest, execute, make_entry
from libs.likelihood import LikelihoodError, LikelihoodSpec, batch_joint_log_likelihood
from libs.posterior_io import write_particles
from libs.utils import derive_rng, derive_seeds, make_generator

logger = logging.getLogger(__name__)

NO_REF = -1
RESAMPLING_SCHEMES = (RESAMPLE_MULTINOMIAL, RESAMPLE_SYSTEMATIC)


class DegenerateWeightsError(RuntimeError):

    def __init__(self, message, window=None, ess=0.0, n_particles=0, n_failed=0):
        super(DegenerateWeightsError, self).__init__(message)
        self.window = window
        self.ess = ess
        self.n_particles = n_particles
        self.n_failed = n_failed

    def __str__(self):
        text = super(DegenerateWeightsError, self).__str__()
        if self.window is None:
            return text
        return '{0} (window {1}, ESS {2:.1f}, {3}/{4} particles failed)'.format(
            text, self.window, self.ess, self.n_failed, self.n_particles)


class MissingTrajectoryError(LookupError):
    pass


class CheckpointNotFoundError(LookupError):
    pass


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    theta_low: float = 0.1
    theta_high: float = 0.5
    rho_alpha: float = 4.0
    rho_beta: float = 1.0
    replicates: int = 20

    def validate(self):
        if not (np.isfinite(self.theta_low) and np.isfinite(self.theta_high)) or self.theta_low >= self.theta_high:
            raise WindowError('theta prior needs low < high, got ({0}, {1})'.format(self.theta_low, self.theta_high))
        if self.theta_low < 0:
            raise WindowError('theta prior must be nonnegative')
        if not self.rho_alpha > 0 or not self.rho_beta > 0:
            raise WindowError('rho prior needs alpha, beta > 0')
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise WindowError('replicates must be a positive integer')
        return self


@dataclass(frozen=True)
class JitterSpec:
    theta: float = 0.05
    rho_minus: float = 0.05
    rho_plus: float = 0.15
    theta_low: float = 0.1
    theta_high: float = 0.5
    rho_high: float = 1.0

    def validate(self):
        for name in ('theta', 'rho_minus', 'rho_plus'):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise WindowError('jitter {0} must be nonnegative'.format(name))
        if self.theta_low >= self.theta_high:
            raise WindowError('jitter theta range needs low < high')
        if not 0.0 < self.rho_high <= 1.0:
            raise WindowError('jitter rho upper bound must lie in (0, 1]')
        return self


@dataclass(frozen=True)
class WindowPlan:
    """Windows ``[t_{m-1} + 1, t_m]`` for boundaries ``t_1 < ... < t_M`` (t_0 = 0)."""
    boundaries: tuple
    n: int = 25000
    resample_size: int = 10000
    burn_in: int = 0
    prior: PriorSpec = field(default_factory=PriorSpec)
    jitter: JitterSpec = field(default_factory=JitterSpec)
    resampling: str = RESAMPLE_MULTINOMIAL

    def validate(self):
        bounds = [int(b) for b in self.boundaries]
        if not bounds:
            raise WindowError('At least one window boundary is required')
        if bounds[0] < 1 or any(b <= a for a, b in zip(bounds, bounds[1:])):
            raise WindowError('Window boundaries must be strictly increasing days >= 1: {0}'.format(bounds))
        if self.burn_in < 0 or self.burn_in >= bounds[0]:
            raise WindowError('burn_in {0} leaves the first window empty'.format(self.burn_in))
        if self.n < 1 or self.resample_size < 1:
            raise WindowError('Particle budget and resample size must be positive')
        if self.resampling not in RESAMPLING_SCHEMES:
            raise WindowError('Unknown resampling scheme {0!r}'.format(self.resampling))
        self.prior.validate()
        self.jitter.validate()
        return self

    @property
    def replicates(self):
        return int(self.prior.replicates)

    @property
    def budget(self):
        return self.n * self.replicates

    @property
    def horizon(self):
        return int(self.boundaries[-1])

    def __len__(self):
        return len(self.boundaries)

    def windows(self):
        """[(m, first_day, last_day)] with m counted from 1."""
        starts = [1] + [int(b) + 1 for b in self.boundaries[:-1]]
        return [(m, start, int(end)) for m, (start, end) in enumerate(zip(starts, self.boundaries), start=1)]

    def window(self, m):
        if not 1 <= m <= len(self.boundaries):
            raise WindowError('No window {0} in a {1}-window plan'.format(m, len(self.boundaries)))
        return self.windows()[m - 1]

    def likelihood_days(self, m):
        _, start, end = self.window(m)
        if m == 1:
            start += self.burn_in
        return start, end


@dataclass
class Particle:
    particle_id: int
    theta: float
    seed: int
    rho: float
    weight: float
    checkpoint_ref: tuple
    lineage: tuple


def _empty(n, width=0):
    return np.zeros((n, width), dtype=np.int64)


@dataclass
class ParticleSet:
    """Column-oriented particles of one window.

    ``lineage`` holds the particle id in every window so far and
    ``ref_lineage`` the particle id under which the matching checkpoint is
    stored. Trajectory histories are filled in on resampled sets only.
    """
    window: int
    particle_id: np.ndarray
    theta: np.ndarray
    rho: np.ndarray
    seed: np.ndarray
    ancestor_id: np.ndarray
    parent_row: np.ndarray
    log_weight: np.ndarray
    checkpoint_ref: np.ndarray
    lineage: np.ndarray
    ref_lineage: np.ndarray
    history_true: np.ndarray = None
    history_reported: np.ndarray = None
    history_deaths: np.ndarray = None

    def __post_init__(self):
        n = len(self.particle_id)
        for name in ('history_true', 'history_reported', 'history_deaths'):
            if getattr(self, name) is None:
                setattr(self, name, _empty(n))

    def __len__(self):
        return len(self.particle_id)

    @classmethod
    def create(cls, window, theta, rho, seed, ancestor_id=None, parent_row=None, lineage=None, ref_lineage=None):
        n = len(theta)
        particle_id = np.arange(n, dtype=np.int64)
        own = particle_id.reshape(-1, 1)
        return cls(window=window,
                   particle_id=particle_id,
                   theta=np.asarray(theta, dtype=float),
                   rho=np.asarray(rho, dtype=float),
                   seed=np.asarray(seed, dtype=np.int64),
                   ancestor_id=np.full(n, NO_REF, dtype=np.int64) if ancestor_id is None else np.asarray(ancestor_id, dtype=np.int64),
                   parent_row=np.full(n, NO_REF, dtype=np.int64) if parent_row is None else np.asarray(parent_row, dtype=np.int64),
                   log_weight=np.zeros(n),
                   checkpoint_ref=np.full((n, 2), NO_REF, dtype=np.int64),
                   lineage=own if lineage is None else np.hstack([lineage, own]),
                   ref_lineage=_empty(n, 1) + NO_REF if ref_lineage is None else np.hstack([ref_lineage, _empty(n, 1) + NO_REF]))

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return ParticleSet(window=self.window,
                           particle_id=self.particle_id[indices],
                           theta=self.theta[indices],
                           rho=self.rho[indices],
                           seed=self.seed[indices],
                           ancestor_id=self.ancestor_id[indices],
                           parent_row=self.parent_row[indices],
                           log_weight=self.log_weight[indices],
                           checkpoint_ref=self.checkpoint_ref[indices],
                           lineage=self.lineage[indices],
                           ref_lineage=self.ref_lineage[indices],
                           history_true=self.history_true[indices],
                           history_reported=self.history_reported[indices],
                           history_deaths=self.history_deaths[indices])

    @property
    def weights(self):
        return normalize(self.log_weight)

    def particle(self, i):
        return Particle(particle_id=int(self.particle_id[i]), theta=float(self.theta[i]), seed=int(self.seed[i]),
                        rho=float(self.rho[i]), weight=float(self.weights[i]),
                        checkpoint_ref=tuple(int(x) for x in self.checkpoint_ref[i]),
                        lineage=tuple(int(x) for x in self.lineage[i]))

    def refs(self):
        return sorted({(int(w), int(p)) for w, p in self.checkpoint_ref if p != NO_REF})

    def reachable_refs(self):
        """Checkpoint refs along the lineage of every particle in the set."""
        keep = set()
        for column in range(self.ref_lineage.shape[1]):
            window = self.window - self.ref_lineage.shape[1] + column + 1
            keep.update((window, int(p)) for p in np.unique(self.ref_lineage[:, column]) if p != NO_REF)
        return keep


@dataclass
class WindowTrajectories:
    """Per-particle true/reported cases and deaths over ``start_day..end_day``."""
    particle_id: np.ndarray
    start_day: int
    end_day: int
    true_cases: np.ndarray
    deaths: np.ndarray
    reported: np.ndarray = None
    failed: np.ndarray = None

    def __post_init__(self):
        if self.reported is None:
            self.reported = np.zeros_like(self.true_cases)
        if self.failed is None:
            self.failed = np.zeros(len(self.particle_id), dtype=bool)

    @property
    def n_days(self):
        return self.end_day - self.start_day + 1

    def rows_for(self, particle_ids):
        particle_ids = np.asarray(particle_ids, dtype=np.int64)
        if len(self.particle_id) == 0:
            if len(particle_ids):
                raise MissingTrajectoryError('No trajectory for particle {0}'.format(int(particle_ids[0])))
            return particle_ids
        order = np.argsort(self.particle_id, kind='stable')
        sorted_ids = self.particle_id[order]
        pos = np.minimum(np.searchsorted(sorted_ids, particle_ids), len(sorted_ids) - 1)
        missing = sorted_ids[pos] != particle_ids
        if missing.any():
            raise MissingTrajectoryError('No trajectory for particle {0}'.format(int(particle_ids[missing][0])))
        return order[pos]

    @classmethod
    def from_results(cls, particle_ids, results, start_day, end_day):
        particle_ids = np.asarray(particle_ids, dtype=np.int64)
        n_days = end_day - start_day + 1
        true_cases = _empty(len(particle_ids), n_days)
        deaths = _empty(len(particle_ids), n_days)
        failed = np.zeros(len(particle_ids), dtype=bool)
        for row, pid in enumerate(particle_ids):
            result = results.get(int(pid))
            if result is None:
                raise MissingTrajectoryError('Ensemble returned no result for particle {0}'.format(int(pid)))
            if not result.success:
                failed[row] = True
                continue
            part = result.trajectory.slice(start_day, end_day)
            if len(part) != n_days:
                raise MissingTrajectoryError('Trajectory of particle {0} does not cover days {1}..{2}'.format(
                    int(pid), start_day, end_day))
            true_cases[row] = part.cases
            deaths[row] = part.deaths
        return cls(particle_id=particle_ids, start_day=start_day, end_day=end_day,
                   true_cases=true_cases, deaths=deaths, failed=failed)


def seed_pool(master_seed, replicates, window):
    return np.asarray(derive_seeds(master_seed, replicates, window, STREAM_SEED_POOL), dtype=np.int64)


def _cross(values, replicates):
    return np.repeat(np.asarray(values), replicates)


def sample_prior(spec, n, rng_seed, seeds=None):
    """Draw ``n`` (theta, rho) pairs and cross each with the replicate seeds.

    Particle ``i * R + r`` carries pair ``i`` and seed ``r``.
    """
    spec.validate()
    if n < 1:
        raise WindowError('Need at least one prior draw')
    rng = derive_rng(rng_seed, STREAM_PRIOR)
    theta = rng.uniform(spec.theta_low, spec.theta_high, size=n)
    rho = np.maximum(rng.beta(spec.rho_alpha, spec.rho_beta, size=n), np.finfo(float).tiny)
    if seeds is None:
        seeds = seed_pool(rng_seed, spec.replicates, 1)
    seeds = np.asarray(seeds, dtype=np.int64)
    return ParticleSet.create(window=1, theta=_cross(theta, len(seeds)), rho=_cross(rho, len(seeds)),
                              seed=np.tile(seeds, n))


def thin_window(particles, trajectories, master_seed):
    """Reported cases for every particle, each from its own stream."""
    rows = trajectories.rows_for(particles.particle_id)
    for i, row in enumerate(rows):
        rng = derive_rng(master_seed, particles.window, int(particles.particle_id[i]), STREAM_THIN)
        trajectories.reported[row] = thin_series(trajectories.true_cases[row], particles.rho[i], rng)
    return trajectories


def compute_weights(particles, trajectories, observations, window_days, spec_cases=None, spec_deaths=None):
    """Unnormalized log-weights over days ``window_days`` (inclusive).

    Deaths enter only when ``spec_deaths`` is given. Failed particles get -inf.
    """
    first, last = window_days
    if first < trajectories.start_day or last > trajectories.end_day:
        raise MissingTrajectoryError('Trajectories cover days {0}..{1}, weights need {2}..{3}'.format(
            trajectories.start_day, trajectories.end_day, first, last))
    rows = trajectories.rows_for(particles.particle_id)
    cols = slice(first - trajectories.start_day, last - trajectories.start_day + 1)
    obs = observations.window(first, last)
    use_deaths = spec_deaths is not None
    if use_deaths and obs.deaths is None:
        raise LikelihoodError('Death likelihood requested without observed deaths')
    log_weight = batch_joint_log_likelihood(
        obs.cases, obs.deaths if use_deaths else None,
        trajectories.reported[rows, cols], trajectories.deaths[rows, cols] if use_deaths else None,
        spec_cases or LikelihoodSpec(), spec_deaths)
    log_weight[trajectories.failed[rows]] = -np.inf
    return log_weight


def normalize(log_weights):
    log_weights = np.asarray(log_weights, dtype=float)
    finite = np.isfinite(log_weights)
    if not finite.any():
        raise DegenerateWeightsError('All {0} particles have zero weight'.format(len(log_weights)),
                                     n_particles=len(log_weights), n_failed=len(log_weights))
    # shift by the max so the largest weight is exp(0)
    shifted = np.where(finite, log_weights - log_weights[finite].max(), -np.inf)
    weights = np.exp(shifted)
    return weights / weights.sum()


def effective_sample_size(probabilities):
    probabilities = np.asarray(probabilities, dtype=float)
    return float(1.0 / np.sum(probabilities ** 2))


def log_evidence(log_weights):
    """Log of the mean unnormalized weight."""
    log_weights = np.asarray(log_weights, dtype=float)
    return float(logsumexp(log_weights) - np.log(len(log_weights)))


def resample_counts(probabilities, k, rng_seed, scheme=RESAMPLE_MULTINOMIAL):
    if k < 1:
        raise WindowError('Resample size must be >= 1, got {0}'.format(k))
    probabilities = np.asarray(probabilities, dtype=float)
    rng = make_generator(rng_seed)
    if scheme == RESAMPLE_MULTINOMIAL:
        return rng.multinomial(k, probabilities).astype(np.int64)
    if scheme == RESAMPLE_SYSTEMATIC:
        # one uniform offset, k evenly spaced points
        points = (rng.random() + np.arange(k)) / k
        picks = np.minimum(np.searchsorted(np.cumsum(probabilities), points, side='right'), len(probabilities) - 1)
        return np.bincount(picks, minlength=len(probabilities)).astype(np.int64)
    raise WindowError('Unknown resampling scheme {0!r}'.format(scheme))


def resample(particles, probabilities, k, rng_seed, scheme=RESAMPLE_MULTINOMIAL):
    """Draw ``k`` particles with replacement; returns (resampled set, copy counts)."""
    counts = resample_counts(probabilities, k, rng_seed, scheme)
    chosen = particles.take(np.repeat(np.arange(len(particles)), counts))
    chosen.log_weight = np.full(k, -np.log(k))
    return chosen, counts


@dataclass
class Proposal:
    particles: ParticleSet
    entries: list
    ancestors: ParticleSet


def propose_next_window(ancestors, jitter, n, seeds, rng_seed, until_day, store=None):
    """Jittered children of the resampled ``ancestors`` for the next window.

    Child pair ``i`` descends from ancestor ``i mod K`` and is crossed with
    every seed in ``seeds``.
    """
    jitter.validate()
    if len(ancestors) == 0:
        raise WindowError('No posterior particles to propose from')
    if store is not None:
        for row, (w, pid) in enumerate(ancestors.checkpoint_ref):
            if pid == NO_REF or (int(w), int(pid)) not in store:
                raise CheckpointNotFoundError('Checkpoint ({0}, {1}) missing for {2}'.format(
                    int(w), int(pid), ancestors.particle(row)))
    rng = make_generator(rng_seed)
    seeds = np.asarray(seeds, dtype=np.int64)
    parent = np.arange(n, dtype=np.int64) % len(ancestors)
    # uniform jitter, truncated to the prior support
    theta = ancestors.theta[parent]
    rho = ancestors.rho[parent]
    lo = np.maximum(theta - jitter.theta, jitter.theta_low)
    hi = np.minimum(theta + jitter.theta, jitter.theta_high)
    new_theta = lo + (hi - lo) * rng.random(n)
    lo = np.maximum(rho - jitter.rho_minus, 0.0)
    hi = np.minimum(rho + jitter.rho_plus, jitter.rho_high)
    new_rho = np.maximum(lo + (hi - lo) * rng.random(n), np.finfo(float).tiny)
    parent_row = _cross(parent, len(seeds))
    children = ParticleSet.create(window=ancestors.window + 1,
                                  theta=_cross(new_theta, len(seeds)),
                                  rho=_cross(new_rho, len(seeds)),
                                  seed=np.tile(seeds, n),
                                  ancestor_id=ancestors.particle_id[parent_row],
                                  parent_row=parent_row,
                                  lineage=ancestors.lineage[parent_row],
                                  ref_lineage=ancestors.ref_lineage[parent_row])
    entries = [make_entry(pid, seed, until_day, tuple(ancestors.checkpoint_ref[row]), {'transmission_rate': theta_i})
               for pid, seed, row, theta_i in zip(children.particle_id, children.seed, parent_row, children.theta)]
    return Proposal(particles=children, entries=entries, ancestors=ancestors)


@dataclass
class WindowResult:
    window: int
    start_day: int
    end_day: int
    likelihood_days: tuple
    particles: ParticleSet
    posterior: ParticleSet
    resampled_count: np.ndarray
    ess: float
    log_evidence: float
    n_failed: int


@dataclass
class SequentialResult:
    windows: list
    posterior: ParticleSet
    days: np.ndarray
    forecast: dict = None

    @property
    def log_evidence(self):
        return float(sum(w.log_evidence for w in self.windows))

    def bundle(self):
        return {SERIES_REPORTED: self.posterior.history_reported,
                SERIES_TRUE: self.posterior.history_true,
                SERIES_DEATHS: self.posterior.history_deaths}


class SequentialCalibrator(object):
    """Runs a WindowPlan against observations over a checkpoint store."""

    def __init__(self, plan, init, store, master_seed, spec_cases=None, spec_deaths=None,
                 out_dir=None, parallelism=1, chunksize=16, progress=False, dedupe=False, collect=True):
        self.plan = plan.validate()
        self.init = init
        self.store = store if isinstance(store, CheckpointStore) else CheckpointStore(store)
        self.master_seed = int(master_seed)
        self.spec_cases = spec_cases or LikelihoodSpec()
        self.spec_deaths = spec_deaths
        self.out_dir = out_dir
        self.parallelism = parallelism
        self.chunksize = chunksize
        self.progress = progress
        self.dedupe = dedupe
        self.collect = collect

    def _manifest(self, window, entries):
        return RunManifest(master_seed=self.master_seed, window=window, entries=entries,
                           store_root=self.store.root, init=self.init,
                           parallelism=self.parallelism, chunksize=self.chunksize)

    def run_window(self, window, observations, ancestors=None):
        m, start, end = self.plan.window(window)
        first, last = self.plan.likelihood_days(m)
        if observations.first_day > first or observations.last_day < last:
            raise WindowError('Observations cover days {0}..{1}, window {2} needs {3}..{4}'.format(
                observations.first_day, observations.last_day, m, first, last))
        seeds = seed_pool(self.master_seed, self.plan.replicates, m)
        if ancestors is None:
            if m != 1:
                raise WindowError('Window {0} needs the posterior of window {1}'.format(m, m - 1))
            particles = sample_prior(self.plan.prior, self.plan.n, self.master_seed, seeds)
            entries = [make_entry(pid, seed, end, None, {'transmission_rate': theta})
                       for pid, seed, theta in zip(particles.particle_id, particles.seed, particles.theta)]
        else:
            if ancestors.window != m - 1:
                raise WindowError('Window {0} cannot follow particles of window {1}'.format(m, ancestors.window))
            proposal = propose_next_window(ancestors, self.plan.jitter, self.plan.n, seeds,
                                           derive_rng(self.master_seed, m, STREAM_JITTER), end, self.store)
            particles, entries = proposal.particles, proposal.entries

        logger.info('Window %d: days %d..%d (likelihood %d..%d), %d particles', m, start, end, first, last, len(particles))
        results = execute(self._manifest(m, entries), self.store, progress=self.progress, dedupe=self.dedupe)
        for row, pid in enumerate(particles.particle_id):
            result = results[int(pid)]
            if result.success:
                particles.checkpoint_ref[row] = result.checkpoint_ref
                particles.ref_lineage[row, -1] = result.checkpoint_ref[1]

        trajectories = WindowTrajectories.from_results(particles.particle_id, results, start, end)
        thin_window(particles, trajectories, self.master_seed)
        particles.log_weight = compute_weights(particles, trajectories, observations, (first, last),
                                               self.spec_cases, self.spec_deaths)
        n_failed = int(trajectories.failed.sum())
        try:
            probabilities = normalize(particles.log_weight)
        except DegenerateWeightsError as e:
            raise DegenerateWeightsError('Window {0} has no particle with positive weight'.format(m),
                                         window=m, ess=0.0, n_particles=len(particles), n_failed=n_failed) from e
        ess = effective_sample_size(probabilities)
        evidence = log_evidence(particles.log_weight)

        posterior, counts = resample(particles, probabilities, self.plan.resample_size,
                                     derive_rng(self.master_seed, m, STREAM_RESAMPLE), self.plan.resampling)
        rows = trajectories.rows_for(posterior.particle_id)
        if ancestors is None:
            posterior.history_true = trajectories.true_cases[rows]
            posterior.history_reported = trajectories.reported[rows]
            posterior.history_deaths = trajectories.deaths[rows]
        else:
            # prefix each survivor with its ancestor's days 1..t_{m-1}
            parents = posterior.parent_row
            posterior.history_true = np.hstack([ancestors.history_true[parents], trajectories.true_cases[rows]])
            posterior.history_reported = np.hstack([ancestors.history_reported[parents], trajectories.reported[rows]])
            posterior.history_deaths = np.hstack([ancestors.history_deaths[parents], trajectories.deaths[rows]])

        logger.info('Window %d: ESS %.1f of %d, log evidence %.3f, %d failed, %d distinct ancestors kept',
                    m, ess, len(particles), evidence, n_failed, int(np.count_nonzero(counts)))
        if n_failed:
            logger.warning('Window %d: %d particles failed to simulate and carry zero weight', m, n_failed)
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            write_particles(self.out_dir, m, particles, counts)
        self.store.gc(posterior.reachable_refs())
        return WindowResult(window=m, start_day=start, end_day=end, likelihood_days=(first, last),
                            particles=particles if self.collect else None, posterior=posterior,
                            resampled_count=counts, ess=ess, log_evidence=evidence, n_failed=n_failed)

    def run_sequential(self, observations):
        if observations.last_day < self.plan.horizon:
            raise WindowError('Observations end on day {0}, plan runs to day {1}'.format(
                observations.last_day, self.plan.horizon))
        results = []
        ancestors = None
        for m, _, _ in self.plan.windows():
            result = self.run_window(m, observations, ancestors)
            results.append(result)
            ancestors = result.posterior
        return SequentialResult(windows=results, posterior=ancestors,
                                days=np.arange(1, self.plan.horizon + 1, dtype=np.int64))

    def forecast(self, posterior, days):
        """Simulate posterior particles ``days`` past their checkpoints with their last theta."""
        if days < 1:
            return None
        window = posterior.window + 1
        start = self.plan.horizon + 1
        end = self.plan.horizon + days
        seeds = derive_seeds(self.master_seed, len(posterior), window, STREAM_SEED_POOL)
        entries = [make_entry(k, seeds[k], end, tuple(posterior.checkpoint_ref[k]))
                   for k in range(len(posterior))]
        results = execute(self._manifest(window, entries), self.store, progress=self.progress, dedupe=self.dedupe)
        members = replace(posterior, window=window, particle_id=np.arange(len(posterior), dtype=np.int64))
        trajectories = WindowTrajectories.from_results(members.particle_id, results, start, end)
        thin_window(members, trajectories, self.master_seed)
        logger.info('Forecast: %d members over days %d..%d', len(posterior), start, end)
        return {'days': np.arange(start, end + 1, dtype=np.int64),
                'true_cases': trajectories.true_cases,
                'reported_cases': trajectories.reported,
                'deaths': trajectories.deaths,
                'failed': trajectories.failed}


def run_window(window, observations, plan, init, store, master_seed, ancestors=None, **kwargs):
    return SequentialCalibrator(plan, init, store, master_seed, **kwargs).run_window(window, observations, ancestors)


def run_sequential(plan, observations, init, store, master_seed, **kwargs):
    return SequentialCalibrator(plan, init, store, master_seed, **kwargs).run_sequential(observations)
