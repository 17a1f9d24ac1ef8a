#!/usr/bin/env python
# -*- coding: utf8 -*-
"""CSV readers and writers for observations, particle dumps and summaries."""
import json
import logging
import os

import numpy as np
import pandas as pd

from libs.constants import DEFAULT_ENCODING
from libs.likelihood import ObservationSeries
from libs.utils import atomic_write

logger = logging.getLogger(__name__)

CSV_EXT = '.csv'
JSON_EXT = '.json'
ENCODE_METHOD = DEFAULT_ENCODING

OBSERVATIONS_NAME = 'observations' + CSV_EXT
GROUND_TRUTH_NAME = 'ground_truth' + CSV_EXT
RIBBONS_NAME = 'ribbons' + CSV_EXT
BUNDLE_NAME = 'bundle' + CSV_EXT
MANIFEST_NAME = 'manifest' + JSON_EXT

OBSERVATION_COLUMNS = ['day', 'cases', 'deaths']
GROUND_TRUTH_COLUMNS = ['day', 'true_cases', 'reported_cases', 'deaths', 'theta', 'rho']
PARTICLE_COLUMNS = ['particle_id', 'ancestor_id', 'theta', 'rho', 'seed', 'log_weight', 'resampled_count']
POSTERIOR_COLUMNS = ['theta', 'rho', 'weight_class']
RIBBON_COLUMNS = ['day', 'series', 'q05', 'q25', 'q50', 'q75', 'q95']


class EmitError(IOError):
    pass


def particles_name(window):
    return 'particles_window_{0}{1}'.format(window, CSV_EXT)


def posterior_name(window):
    return 'posterior_window_{0}{1}'.format(window, CSV_EXT)


def frame_to_text(frame):
    return frame.to_csv(index=False, lineterminator='\n')


def write_frame(path, frame, columns):
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise EmitError('Missing columns for {0}: {1}'.format(os.path.basename(path), missing))
    return atomic_write(path, frame_to_text(frame[columns]), mode='w', encoding=ENCODE_METHOD)


def read_frame(path, columns):
    if not os.path.exists(path):
        raise EmitError('File {0} does not exist'.format(path))
    frame = pd.read_csv(path, encoding=ENCODE_METHOD, float_precision='round_trip')
    if list(frame.columns) != list(columns):
        raise EmitError('Unexpected columns in {0}: {1}'.format(path, list(frame.columns)))
    return frame


class ResultWriter(object):
    """Writes result files into ``out_dir``; removes them all if any write fails.

    Use as a context manager::

        with ResultWriter(out_dir) as writer:
            writer.frame(RIBBONS_NAME, ribbons, RIBBON_COLUMNS)
    """

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.written = []

    def __enter__(self):
        try:
            os.makedirs(self.out_dir, exist_ok=True)
        except OSError as e:
            raise EmitError('Cannot create output directory {0}: {1}'.format(self.out_dir, e))
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            self.discard()
        return False

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def frame(self, name, frame, columns):
        path = self.path(name)
        try:
            write_frame(path, frame, columns)
        except OSError as e:
            raise EmitError('Cannot write {0}: {1}'.format(path, e))
        self.written.append(path)
        return path

    def json(self, name, payload):
        path = self.path(name)
        text = json.dumps(payload, indent=2, sort_keys=True) + '\n'
        try:
            atomic_write(path, text, mode='w', encoding=ENCODE_METHOD)
        except OSError as e:
            raise EmitError('Cannot write {0}: {1}'.format(path, e))
        self.written.append(path)
        return path

    def discard(self):
        for path in self.written:
            if os.path.exists(path):
                os.remove(path)
        if self.written:
            logger.warning('Removed %d partially written result files from %s', len(self.written), self.out_dir)
        self.written = []


def observations_frame(observations):
    deaths = observations.deaths if observations.deaths is not None else np.zeros_like(observations.cases)
    return pd.DataFrame({
        'day': observations.days.astype(np.int64),
        'cases': np.asarray(observations.cases, dtype=np.int64),
        'deaths': np.asarray(deaths, dtype=np.int64),
    })


def read_observations(path, with_deaths=True):
    frame = read_frame(path, OBSERVATION_COLUMNS)
    days = frame['day'].to_numpy()
    if len(days) == 0 or np.any(np.diff(days) != 1):
        raise EmitError('Observation days in {0} must be consecutive'.format(path))
    return ObservationSeries(cases=frame['cases'].to_numpy(),
                             deaths=frame['deaths'].to_numpy() if with_deaths else None,
                             first_day=int(days[0]))


def particles_frame(particles, resampled_count):
    return pd.DataFrame({
        'particle_id': particles.particle_id,
        'ancestor_id': particles.ancestor_id,
        'theta': particles.theta,
        'rho': particles.rho,
        'seed': particles.seed,
        'log_weight': particles.log_weight,
        'resampled_count': np.asarray(resampled_count, dtype=np.int64),
    })


def write_particles(out_dir, window, particles, resampled_count):
    path = os.path.join(out_dir, particles_name(window))
    return write_frame(path, particles_frame(particles, resampled_count), PARTICLE_COLUMNS)


def posterior_frame(particles, resampled_count):
    """One row per distinct resampled particle; weight_class is its copy count."""
    counts = np.asarray(resampled_count, dtype=np.int64)
    keep = counts > 0
    return pd.DataFrame({
        'theta': particles.theta[keep],
        'rho': particles.rho[keep],
        'weight_class': counts[keep],
    })


def read_posterior(path):
    return read_frame(path, POSTERIOR_COLUMNS)


def read_ribbons(path):
    return read_frame(path, RIBBON_COLUMNS)


def bundle_frame(days, series_arrays):
    """Wide bundle: one row per (particle, series), one column per day."""
    frames = []
    for series, matrix in series_arrays.items():
        matrix = np.asarray(matrix, dtype=np.int64)
        frame = pd.DataFrame(matrix, columns=['d{0}'.format(d) for d in days])
        frame.insert(0, 'series', series)
        frame.insert(0, 'member', np.arange(len(matrix), dtype=np.int64))
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def read_bundle(path):
    frame = pd.read_csv(path, encoding=ENCODE_METHOD, float_precision='round_trip')
    if list(frame.columns[:2]) != ['member', 'series']:
        raise EmitError('Unexpected bundle layout in {0}'.format(path))
    return frame
