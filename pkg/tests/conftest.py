import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from libs.bias_model import thin_series  # noqa: E402
from libs.ensemble import CheckpointStore, InitSpec  # noqa: E402
from libs.likelihood import ObservationSeries  # noqa: E402
from libs.seir_sim import SimParams, advance, init_state  # noqa: E402

CONFIG_DIR = os.path.join(ROOT, 'configs')


@pytest.fixture
def params():
    return SimParams()


@pytest.fixture
def store(tmp_path):
    return CheckpointStore(str(tmp_path / 'store'))


@pytest.fixture
def small_init():
    return InitSpec(population=2000, initial_exposed=20, params=SimParams())


def random_params(rng):
    return SimParams(
        transmission_rate=float(rng.uniform(0.0, 1.0)),
        frac_E_to_P=float(rng.uniform()),
        frac_P_to_Sm=float(rng.uniform()),
        frac_H_to_C=float(rng.uniform()),
        frac_C_to_D=float(rng.uniform()),
        rel_infectiousness_symptomatic=float(rng.uniform(0.0, 2.0)),
        rel_infectiousness_detected=float(rng.uniform()),
        detection_prob=tuple(float(x) for x in rng.uniform(size=4)),
        detection_delay=int(rng.integers(1, 5)),
        sojourn_mean=tuple(float(x) for x in rng.uniform(1.0, 8.0, size=8)),
        sojourn_shape=float(rng.uniform(1.0, 6.0)),
    )


def synthetic_observations(horizon, theta=0.35, rho=0.7, population=2000, initial_exposed=20, seed=11):
    state = init_state(population, initial_exposed, SimParams(transmission_rate=theta), seed)
    _, trajectory = advance(state, horizon)
    reported = thin_series(trajectory.cases, rho, seed + 1)
    return ObservationSeries(cases=reported, deaths=trajectory.deaths, first_day=1)


@pytest.fixture
def observations():
    return synthetic_observations(20)
