#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Synthetic-data experiments: ground truth, calibration, summaries, coverage.

Calibration only ever sees the reported observation series. The hidden truth
(true cases and the parameter schedules) is joined back in by ``verify``.
"""
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from libs import __version__
from libs.bias_model import check_rho, thin_by_segments
from libs.constants import (RESAMPLE_MULTINOMIAL, SERIES, SERIES_DEATHS, SERIES_REPORTED, SERIES_TRUE,
                            SETTING_BOUNDARIES, SETTING_BUDGET_N, SETTING_BUDGET_REPLICATES,
                            SETTING_BUDGET_RESAMPLE, SETTING_BURN_IN, SETTING_DEDUPE, SETTING_FORECAST_DAYS,
                            SETTING_HORIZON, SETTING_INITIAL_EXPOSED, SETTING_JITTER_RHO_MINUS,
                            SETTING_JITTER_RHO_PLUS, SETTING_JITTER_THETA, SETTING_MASTER_SEED, SETTING_NAME,
                            SETTING_OUT_DIR, SETTING_PARALLELISM, SETTING_POPULATION, SETTING_PRIOR_RHO_BETA,
                            SETTING_PRIOR_THETA, SETTING_RESAMPLING, SETTING_RHO_SCHEDULE, SETTING_SIGMA_CASES,
                            SETTING_SIGMA_DEATHS, SETTING_SIMULATOR, SETTING_TARGETS, SETTING_THETA_SCHEDULE,
                            SETTING_TRUTH_SEED, STREAM_TRUTH_THIN, TARGET_CASES, TARGET_CASES_DEATHS, TARGETS)
from libs.ensemble import CheckpointStore, InitSpec
from libs.likelihood import LikelihoodSpec, ObservationSeries
from libs.posterior_io import (BUNDLE_NAME, GROUND_TRUTH_COLUMNS, GROUND_TRUTH_NAME, MANIFEST_NAME,
                               OBSERVATION_COLUMNS, OBSERVATIONS_NAME, POSTERIOR_COLUMNS, RIBBON_COLUMNS,
                               RIBBONS_NAME, EmitError, ResultWriter, bundle_frame, observations_frame,
                               posterior_frame, posterior_name, read_bundle, read_frame, read_posterior)
from libs.seir_sim import SimParams, advance, init_state, restore, save_checkpoint
from libs.sis_engine import JitterSpec, PriorSpec, SequentialCalibrator, WindowError, WindowPlan
from libs.utils import derive_rng

logger = logging.getLogger(__name__)

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
QUANTILE_COLUMNS = ('q05', 'q25', 'q50', 'q75', 'q95')
CHECKPOINT_DIR = 'checkpoints'

SCALES = {
    'full': {'n': 25000, 'replicates': 20, 'resample_size': 10000},
    'desk': {'n': 1000, 'replicates': 10, 'resample_size': 1000},
}


class ConfigError(ValueError):
    pass


class ScheduleError(ConfigError):
    pass


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant day -> value; segment i starts on ``starts[i]``."""
    starts: tuple
    values: tuple

    @classmethod
    def parse(cls, items, name='schedule'):
        try:
            pairs = [(int(day), float(value)) for day, value in items]
        except (TypeError, ValueError):
            raise ScheduleError('{0} must be a list of [start_day, value] pairs'.format(name))
        if not pairs:
            raise ScheduleError('{0} is empty'.format(name))
        if pairs[0][0] != 0:
            raise ScheduleError('{0} must start on day 0, starts on day {1}'.format(name, pairs[0][0]))
        days = [day for day, _ in pairs]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ScheduleError('{0} start days must be strictly increasing: {1}'.format(name, days))
        return cls(tuple(days), tuple(value for _, value in pairs))

    def value_on(self, day):
        index = int(np.searchsorted(self.starts, day, side='right')) - 1
        return self.values[index]

    def daily(self, days):
        index = np.searchsorted(self.starts, np.asarray(days), side='right') - 1
        return np.asarray(self.values)[index]

    def segments(self, horizon):
        """(first_day, last_day, value) for days 1..horizon."""
        out = []
        for i, (start, value) in enumerate(zip(self.starts, self.values)):
            first = max(start, 1)
            last = horizon if i + 1 == len(self.starts) else min(self.starts[i + 1] - 1, horizon)
            if first <= last:
                out.append((first, last, value))
        return out

    def to_list(self):
        return [[d, v] for d, v in zip(self.starts, self.values)]


@dataclass
class ExperimentConfig:
    name: str
    population: int
    initial_exposed: int
    sim_params: SimParams
    theta_schedule: Schedule
    rho_schedule: Schedule
    plan: WindowPlan
    sigma_cases: float = 1.0
    sigma_deaths: float = 1.0
    out_dir: str = 'runs'
    master_seed: int = 1
    truth_seed: int = 7
    targets: str = TARGET_CASES
    parallelism: int = 1
    horizon: int = 75
    forecast_days: int = 0
    dedupe: bool = False

    @classmethod
    def from_settings(cls, settings, scale=None):
        def need(key):
            if key not in settings:
                raise ConfigError('Missing setting {0}'.format(key))
            return settings[key]

        try:
            theta_schedule = Schedule.parse(need(SETTING_THETA_SCHEDULE), SETTING_THETA_SCHEDULE)
            rho_schedule = Schedule.parse(need(SETTING_RHO_SCHEDULE), SETTING_RHO_SCHEDULE)
            for rho in rho_schedule.values:
                check_rho(rho)
            sim_params = SimParams.from_mapping(settings.get(SETTING_SIMULATOR) or {})
            theta_lo, theta_hi = settings.get(SETTING_PRIOR_THETA, [0.1, 0.5])
            rho_alpha, rho_beta = settings.get(SETTING_PRIOR_RHO_BETA, [4.0, 1.0])
            budget = {
                'n': int(settings.get(SETTING_BUDGET_N, SCALES['desk']['n'])),
                'replicates': int(settings.get(SETTING_BUDGET_REPLICATES, SCALES['desk']['replicates'])),
                'resample_size': int(settings.get(SETTING_BUDGET_RESAMPLE, SCALES['desk']['resample_size'])),
            }
            if scale is not None:
                if scale not in SCALES:
                    raise ConfigError('Unknown scale {0!r}; choose from {1}'.format(scale, sorted(SCALES)))
                budget.update(SCALES[scale])
            prior = PriorSpec(theta_low=float(theta_lo), theta_high=float(theta_hi),
                              rho_alpha=float(rho_alpha), rho_beta=float(rho_beta),
                              replicates=budget['replicates'])
            jitter = JitterSpec(theta=float(settings.get(SETTING_JITTER_THETA, 0.05)),
                                rho_minus=float(settings.get(SETTING_JITTER_RHO_MINUS, 0.05)),
                                rho_plus=float(settings.get(SETTING_JITTER_RHO_PLUS, 0.15)),
                                theta_low=float(theta_lo), theta_high=float(theta_hi))
            plan = WindowPlan(boundaries=tuple(int(b) for b in need(SETTING_BOUNDARIES)),
                              n=budget['n'], resample_size=budget['resample_size'],
                              burn_in=int(settings.get(SETTING_BURN_IN, 0)),
                              prior=prior, jitter=jitter,
                              resampling=settings.get(SETTING_RESAMPLING, RESAMPLE_MULTINOMIAL))
            config = cls(name=str(settings.get(SETTING_NAME, 'experiment')),
                         population=int(need(SETTING_POPULATION)),
                         initial_exposed=int(need(SETTING_INITIAL_EXPOSED)),
                         sim_params=sim_params,
                         theta_schedule=theta_schedule,
                         rho_schedule=rho_schedule,
                         plan=plan,
                         sigma_cases=float(settings.get(SETTING_SIGMA_CASES, 1.0)),
                         sigma_deaths=float(settings.get(SETTING_SIGMA_DEATHS, 1.0)),
                         out_dir=str(settings.get(SETTING_OUT_DIR, 'runs')),
                         master_seed=int(settings.get(SETTING_MASTER_SEED, 1)),
                         truth_seed=int(settings.get(SETTING_TRUTH_SEED, 7)),
                         targets=str(settings.get(SETTING_TARGETS, TARGET_CASES)),
                         parallelism=int(settings.get(SETTING_PARALLELISM, 1)),
                         horizon=int(settings.get(SETTING_HORIZON, plan.boundaries[-1])),
                         forecast_days=int(settings.get(SETTING_FORECAST_DAYS, 0)),
                         dedupe=bool(settings.get(SETTING_DEDUPE, False)))
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError('Invalid configuration: {0}'.format(e))
        return config.validate()

    def validate(self):
        if self.population < 1 or not 0 <= self.initial_exposed <= self.population:
            raise ConfigError('Population {0} with {1} initially exposed is invalid'.format(
                self.population, self.initial_exposed))
        if self.targets not in TARGETS:
            raise ConfigError('targets must be one of {0}, got {1!r}'.format(TARGETS, self.targets))
        if self.parallelism < 1:
            raise ConfigError('parallelism must be >= 1')
        if self.forecast_days < 0:
            raise ConfigError('forecast_days must be >= 0')
        if self.horizon < self.plan.horizon:
            raise ConfigError('horizon {0} ends before the last window boundary {1}'.format(
                self.horizon, self.plan.horizon))
        try:
            self.plan.validate()
            LikelihoodSpec(self.sigma_cases)
            LikelihoodSpec(self.sigma_deaths)
        except (WindowError, ValueError) as e:
            raise ConfigError(str(e))
        return self

    @property
    def use_deaths(self):
        return self.targets == TARGET_CASES_DEATHS

    def init_spec(self):
        return InitSpec(self.population, self.initial_exposed, self.sim_params)

    def to_dict(self):
        """Plain-data echo of the configuration for manifest.json."""
        plan = self.plan
        return {
            'name': self.name,
            'population': self.population,
            'initial_exposed': self.initial_exposed,
            'simulator': self.sim_params.to_mapping(),
            'truth': {'theta_schedule': self.theta_schedule.to_list(),
                      'rho_schedule': self.rho_schedule.to_list()},
            'windows': {'boundaries': list(plan.boundaries), 'burn_in': plan.burn_in},
            'budget': {'n': plan.n, 'replicates': plan.replicates, 'resample': plan.resample_size},
            'prior': {'theta': [plan.prior.theta_low, plan.prior.theta_high],
                      'rho_beta': [plan.prior.rho_alpha, plan.prior.rho_beta]},
            'jitter': {'theta': plan.jitter.theta, 'rho_minus': plan.jitter.rho_minus,
                       'rho_plus': plan.jitter.rho_plus},
            'likelihood': {'sigma_cases': self.sigma_cases, 'sigma_deaths': self.sigma_deaths},
            'sis': {'resampling': plan.resampling, 'dedupe': self.dedupe},
            'master_seed': self.master_seed,
            'targets': self.targets,
            'horizon': self.horizon,
            'forecast_days': self.forecast_days,
        }


@dataclass
class GroundTruth:
    days: np.ndarray
    true_cases: np.ndarray
    reported_cases: np.ndarray
    deaths: np.ndarray
    theta: np.ndarray
    rho: np.ndarray

    @property
    def observations(self):
        return ObservationSeries(cases=self.reported_cases, deaths=self.deaths, first_day=int(self.days[0]))

    def frame(self):
        return pd.DataFrame({
            'day': self.days, 'true_cases': self.true_cases, 'reported_cases': self.reported_cases,
            'deaths': self.deaths, 'theta': self.theta, 'rho': self.rho,
        })

    @classmethod
    def from_frame(cls, frame):
        return cls(days=frame['day'].to_numpy(np.int64),
                   true_cases=frame['true_cases'].to_numpy(np.int64),
                   reported_cases=frame['reported_cases'].to_numpy(np.int64),
                   deaths=frame['deaths'].to_numpy(np.int64),
                   theta=frame['theta'].to_numpy(float),
                   rho=frame['rho'].to_numpy(float))


def generate_ground_truth(config):
    """One simulator run under the theta schedule, thinned under the rho schedule.

    Each theta change is applied by checkpointing at the day before it takes
    effect and restoring with the new rate; the random stream carries on.
    """
    segments = config.theta_schedule.segments(config.horizon)
    params = config.sim_params.with_overrides(transmission_rate=segments[0][2])
    state = init_state(config.population, config.initial_exposed, params, config.truth_seed)
    parts = []
    for i, (first, last, theta) in enumerate(segments):
        if i > 0:
            state = restore(save_checkpoint(state), {'transmission_rate': theta})
        state, part = advance(state, last)
        parts.append(part)
        logger.debug('Truth days %d..%d at theta %.3f: %d cases', first, last, theta, int(part.cases.sum()))
    days = np.arange(1, config.horizon + 1, dtype=np.int64)
    true_cases = np.concatenate([p.cases for p in parts])
    deaths = np.concatenate([p.deaths for p in parts])
    rho = config.rho_schedule.daily(days)
    reported = thin_by_segments(true_cases, rho, derive_rng(config.truth_seed, STREAM_TRUTH_THIN))
    logger.info('Ground truth: %d true cases, %d reported, %d deaths over %d days',
                int(true_cases.sum()), int(reported.sum()), int(deaths.sum()), config.horizon)
    return GroundTruth(days=days, true_cases=true_cases, reported_cases=reported, deaths=deaths,
                       theta=config.theta_schedule.daily(days), rho=rho)


@dataclass
class PosteriorSummary:
    ribbons: pd.DataFrame
    clouds: dict = field(default_factory=dict)
    days: np.ndarray = None
    bundle: dict = None
    diagnostics: list = field(default_factory=list)

    def ribbon(self, series):
        return self.ribbons[self.ribbons['series'] == series].reset_index(drop=True)


def summarize(bundle, days, clouds=None, quantiles=QUANTILES):
    """Pointwise quantile ribbons of every series in ``bundle``.

    ``bundle`` maps series name to a (members, days) matrix.
    """
    if not bundle or any(len(np.asarray(m)) == 0 for m in bundle.values()):
        raise EmitError('Cannot summarize an empty trajectory bundle')
    days = np.asarray(days, dtype=np.int64)
    frames = []
    for series in [s for s in SERIES if s in bundle] + sorted(s for s in bundle if s not in SERIES):
        matrix = np.asarray(bundle[series], dtype=float)
        if matrix.shape[1] != len(days):
            raise EmitError('Series {0} has {1} days, expected {2}'.format(series, matrix.shape[1], len(days)))
        q = np.quantile(matrix, quantiles, axis=0)
        frame = pd.DataFrame({'day': days, 'series': series})
        for name, row in zip(QUANTILE_COLUMNS, q):
            frame[name] = row
        frames.append(frame)
    return PosteriorSummary(ribbons=pd.concat(frames, ignore_index=True), clouds=dict(clouds or {}),
                            days=days, bundle=bundle)


def emit(summary, out_dir, config=None, ground_truth=None, diagnostics=None):
    """Write ribbons, posterior clouds, the bundle and manifest.json; returns the paths."""
    if not summary.clouds or any(len(c) == 0 for c in summary.clouds.values()):
        raise EmitError('Posterior cloud is empty; nothing written')
    with ResultWriter(out_dir) as writer:
        if ground_truth is not None:
            writer.frame(GROUND_TRUTH_NAME, ground_truth.frame(), GROUND_TRUTH_COLUMNS)
        writer.frame(RIBBONS_NAME, summary.ribbons, RIBBON_COLUMNS)
        for window in sorted(summary.clouds):
            writer.frame(posterior_name(window), summary.clouds[window], POSTERIOR_COLUMNS)
        if summary.bundle is not None:
            writer.frame(BUNDLE_NAME, bundle_frame(summary.days, summary.bundle),
                         ['member', 'series'] + ['d{0}'.format(d) for d in summary.days])
        writer.json(MANIFEST_NAME, {
            'software': 'epicalib',
            'version': __version__,
            'config': None if config is None else config.to_dict(),
            'windows': list(diagnostics or summary.diagnostics),
            'files': sorted(os.path.basename(p) for p in writer.written) + [MANIFEST_NAME],
        })
        return list(writer.written)


def write_truth(ground_truth, out_dir):
    with ResultWriter(out_dir) as writer:
        writer.frame(OBSERVATIONS_NAME, observations_frame(ground_truth.observations), OBSERVATION_COLUMNS)
        writer.frame(GROUND_TRUTH_NAME, ground_truth.frame(), GROUND_TRUTH_COLUMNS)
        return list(writer.written)


def read_ground_truth(path):
    return GroundTruth.from_frame(read_frame(path, GROUND_TRUTH_COLUMNS))


@dataclass
class CalibrationOutput:
    result: object
    summary: PosteriorSummary
    files: list


def calibrate(config, observations, out_dir=None, progress=False):
    """Sequential calibration of ``observations``; artifacts land in ``out_dir``."""
    out_dir = out_dir or config.out_dir
    if observations.last_day < config.plan.horizon:
        raise WindowError('Observations end on day {0} before the last window boundary {1}'.format(
            observations.last_day, config.plan.horizon))
    store = CheckpointStore(os.path.join(out_dir, CHECKPOINT_DIR))
    calibrator = SequentialCalibrator(
        config.plan, config.init_spec(), store, config.master_seed,
        spec_cases=LikelihoodSpec(config.sigma_cases),
        spec_deaths=LikelihoodSpec(config.sigma_deaths) if config.use_deaths else None,
        out_dir=out_dir, parallelism=config.parallelism, progress=progress, dedupe=config.dedupe)
    logger.info('Calibrating %s to %s: %d windows, %d particles per window, %d resampled',
                config.name, config.targets, len(config.plan), config.plan.budget, config.plan.resample_size)
    result = calibrator.run_sequential(observations)
    days = result.days
    bundle = result.bundle()
    if config.forecast_days:
        forecast = calibrator.forecast(result.posterior, config.forecast_days)
        result.forecast = forecast
        keep = ~forecast['failed']
        days = np.concatenate([days, forecast['days']])
        bundle = {SERIES_REPORTED: np.hstack([bundle[SERIES_REPORTED], forecast['reported_cases']])[keep],
                  SERIES_TRUE: np.hstack([bundle[SERIES_TRUE], forecast['true_cases']])[keep],
                  SERIES_DEATHS: np.hstack([bundle[SERIES_DEATHS], forecast['deaths']])[keep]}
    clouds = {w.window: posterior_frame(w.particles, w.resampled_count) for w in result.windows}
    summary = summarize(bundle, days, clouds)
    summary.diagnostics = [{'window': w.window, 'first_day': w.start_day, 'last_day': w.end_day,
                            'ess': round(w.ess, 6), 'log_evidence': round(w.log_evidence, 6),
                            'failed': w.n_failed}
                           for w in result.windows]
    files = emit(summary, out_dir, config)
    return CalibrationOutput(result=result, summary=summary, files=files)


def resummarize(out_dir, windows):
    """Rebuild ribbons from an emitted bundle.csv and posterior clouds."""
    frame = read_bundle(os.path.join(out_dir, BUNDLE_NAME))
    day_columns = [c for c in frame.columns if c.startswith('d')]
    days = np.array([int(c[1:]) for c in day_columns], dtype=np.int64)
    bundle = {series: group[day_columns].to_numpy(np.int64) for series, group in frame.groupby('series', sort=False)}
    clouds = {}
    for window in range(1, windows + 1):
        path = os.path.join(out_dir, posterior_name(window))
        if os.path.exists(path):
            clouds[window] = read_posterior(path)
    return summarize(bundle, days, clouds)


def weighted_interval(values, counts, level=0.9):
    """Central interval of a cloud whose rows repeat ``counts`` times."""
    samples = np.repeat(np.asarray(values, dtype=float), np.asarray(counts, dtype=np.int64))
    tail = (1.0 - level) / 2.0
    return float(np.quantile(samples, tail)), float(np.quantile(samples, 1.0 - tail))


def verify(out_dir, ground_truth, plan, level=0.9):
    """Coverage of the hidden truth by each window's posterior cloud.

    The truth for a window is the mean daily parameter over its likelihood days.
    """
    rows = []
    for m, _, _ in plan.windows():
        first, last = plan.likelihood_days(m)
        mask = (ground_truth.days >= first) & (ground_truth.days <= last)
        cloud = read_posterior(os.path.join(out_dir, posterior_name(m)))
        row = {'window': m, 'days': '{0}-{1}'.format(first, last)}
        for name, truth in (('theta', ground_truth.theta[mask].mean()), ('rho', ground_truth.rho[mask].mean())):
            lo, hi = weighted_interval(cloud[name], cloud['weight_class'], level)
            row[name] = float(truth)
            row[name + '_lo'] = lo
            row[name + '_hi'] = hi
            row[name + '_covered'] = bool(lo <= truth <= hi)
        rows.append(row)
    ribbons = read_frame(os.path.join(out_dir, RIBBONS_NAME), RIBBON_COLUMNS)
    widths = {series: float((group['q95'] - group['q05']).mean()) for series, group in ribbons.groupby('series')}
    return pd.DataFrame(rows), widths
