"""Binomial under-reporting of true daily counts."""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from libs.utils import make_generator

logger = logging.getLogger(__name__)


class InvalidBiasError(ValueError):
    pass


@dataclass(frozen=True)
class BiasParam:
    """Reporting probability, constant within a window.

    ``rho == 1`` is accepted as the identity map.
    """
    rho: float

    def __post_init__(self):
        check_rho(self.rho)

    def __float__(self):
        return float(self.rho)


def check_rho(rho):
    rho = float(rho)
    if not np.isfinite(rho) or not 0.0 < rho <= 1.0:
        raise InvalidBiasError('Reporting probability {0!r} outside (0, 1]'.format(rho))
    return rho


def _as_counts(values):
    counts = np.asarray(values)
    if counts.size and (counts < 0).any():
        raise InvalidBiasError('True counts must be nonnegative')
    return counts.astype(np.int64)


def thin_series(true_counts, rho, rng_seed):
    """Observed_t ~ Binomial(true_t, rho), independently per day.

    ``rng_seed`` is an integer seed or a ``numpy.random.Generator``.
    """
    rho = check_rho(rho)
    counts = _as_counts(true_counts)
    if rho == 1.0:
        return counts.copy()
    return make_generator(rng_seed).binomial(counts, rho).astype(np.int64)


def thin_by_segments(true_counts, rho_values, rng_seed):
    """Thin with a per-day reporting probability (piecewise schedules)."""
    counts = _as_counts(true_counts)
    rho_values = np.asarray(rho_values, dtype=float)
    if rho_values.shape != counts.shape:
        raise InvalidBiasError('Need one reporting probability per day')
    for rho in np.unique(rho_values):
        check_rho(rho)
    return make_generator(rng_seed).binomial(counts, rho_values).astype(np.int64)


def thinning_log_pmf(observed, true, rho):
    """Exact log Binomial(true, rho) mass at ``observed``; -inf when impossible."""
    rho = check_rho(rho)
    observed = np.asarray(observed, dtype=float)
    true = np.asarray(true, dtype=float)
    log_choose = gammaln(true + 1) - gammaln(observed + 1) - gammaln(np.maximum(true - observed, 0) + 1)
    value = log_choose + xlogy(observed, rho) + xlog1py(true - observed, -rho)
    value = np.where((observed > true) | (observed < 0), -np.inf, value)
    if value.ndim == 0:
        return float(value)
    return value
