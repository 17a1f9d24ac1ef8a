#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Event-driven stochastic SEIR simulator with daily time steps.

Individuals entering a compartment are assigned their exit day and branch
when they enter, and stored as batched events keyed by
(firing day, source, target). Exposure on day t is drawn as
Binomial(S, 1 - exp(-theta * Lambda / N)) with Lambda taken from the
occupancy at the start of the day.

A ModelState is owned by one caller at a time; ``advance`` mutates it in
place. Nothing here is shared between states, so separate states may be
advanced from separate threads or processes.
"""
import logging
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from functools import lru_cache

import numpy as np
from scipy import stats

from libs.checkpoint_io import Checkpoint, CheckpointContent, SerializationError, pack_checkpoint

logger = logging.getLogger(__name__)

MAX_DAY = 2 ** 31 - 1


class Compartment(IntEnum):
    S = 0
    E = 1
    A_u = 2
    A_d = 3
    P_u = 4
    P_d = 5
    Sm_u = 6
    Sm_d = 7
    Ss_u = 8
    Ss_d = 9
    H = 10
    C = 11
    Hp = 12
    D = 13
    R = 14


N_COMPARTMENTS = len(Compartment)
ABSORBING = frozenset((Compartment.D, Compartment.R))

DETECTION_STATES = ('A', 'P', 'Sm', 'Ss')
SOJOURN_STATES = ('E', 'P', 'A', 'Sm', 'Ss', 'H', 'C', 'Hp')

# undetected compartment -> (detected twin, index into SimParams.detection_prob)
DETECTABLE = {
    Compartment.A_u: (Compartment.A_d, 0),
    Compartment.P_u: (Compartment.P_d, 1),
    Compartment.Sm_u: (Compartment.Sm_d, 2),
    Compartment.Ss_u: (Compartment.Ss_d, 3),
}
DETECTED_TWIN = {u: d for u, (d, _) in DETECTABLE.items()}
DETECTION_PAIRS = frozenset((int(u), int(d)) for u, (d, _) in DETECTABLE.items())

# compartment -> (first target, SimParams field giving P(first), second target)
BRANCHES = {
    Compartment.E: (Compartment.P_u, 'frac_E_to_P', Compartment.A_u),
    Compartment.A_u: (Compartment.R, None, None),
    Compartment.A_d: (Compartment.R, None, None),
    Compartment.P_u: (Compartment.Sm_u, 'frac_P_to_Sm', Compartment.Ss_u),
    Compartment.P_d: (Compartment.Sm_d, 'frac_P_to_Sm', Compartment.Ss_d),
    Compartment.Sm_u: (Compartment.R, None, None),
    Compartment.Sm_d: (Compartment.R, None, None),
    Compartment.Ss_u: (Compartment.H, None, None),
    Compartment.Ss_d: (Compartment.H, None, None),
    Compartment.H: (Compartment.C, 'frac_H_to_C', Compartment.R),
    Compartment.C: (Compartment.D, 'frac_C_to_D', Compartment.Hp),
    Compartment.Hp: (Compartment.R, None, None),
}

SOJOURN_INDEX = {
    Compartment.E: 0,
    Compartment.P_u: 1, Compartment.P_d: 1,
    Compartment.A_u: 2, Compartment.A_d: 2,
    Compartment.Sm_u: 3, Compartment.Sm_d: 3,
    Compartment.Ss_u: 4, Compartment.Ss_d: 4,
    Compartment.H: 5,
    Compartment.C: 6,
    Compartment.Hp: 7,
}

# The parameters a restart may change (besides the seed).
OVERRIDABLE = (
    'frac_E_to_P',
    'frac_P_to_Sm',
    'rel_infectiousness_symptomatic',
    'rel_infectiousness_detected',
    'transmission_rate',
)
SEED_KEY = 'seed'

LEDGER_COLUMNS = ('exposed', 'cases', 'deaths', 'recovered')


class InvalidParamsError(ValueError):
    pass


class OverrideError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimParams:
    transmission_rate: float = 0.3
    frac_E_to_P: float = 0.65
    frac_P_to_Sm: float = 0.8
    frac_H_to_C: float = 0.25
    frac_C_to_D: float = 0.4
    rel_infectiousness_symptomatic: float = 1.0
    rel_infectiousness_detected: float = 0.3
    detection_prob: tuple = (0.05, 0.1, 0.4, 0.9)
    detection_delay: int = 2
    sojourn_mean: tuple = (3.0, 2.0, 5.0, 6.0, 4.0, 5.0, 7.0, 3.0)
    sojourn_shape: float = 4.0

    def validate(self):
        probabilities = {
            'frac_E_to_P': self.frac_E_to_P,
            'frac_P_to_Sm': self.frac_P_to_Sm,
            'frac_H_to_C': self.frac_H_to_C,
            'frac_C_to_D': self.frac_C_to_D,
            'rel_infectiousness_detected': self.rel_infectiousness_detected,
        }
        if len(self.detection_prob) != len(DETECTION_STATES):
            raise InvalidParamsError('detection_prob needs {0} values'.format(len(DETECTION_STATES)))
        for name, value in zip(DETECTION_STATES, self.detection_prob):
            probabilities['detection_prob/' + name] = value
        for name, value in probabilities.items():
            if not np.isfinite(value) or not 0.0 <= value <= 1.0:
                raise InvalidParamsError('{0}={1!r} is not a probability'.format(name, value))
        for name in ('transmission_rate', 'rel_infectiousness_symptomatic'):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InvalidParamsError('{0}={1!r} must be nonnegative'.format(name, value))
        if len(self.sojourn_mean) != len(SOJOURN_STATES):
            raise InvalidParamsError('sojourn_mean needs {0} values'.format(len(SOJOURN_STATES)))
        for name, value in zip(SOJOURN_STATES, self.sojourn_mean):
            if not np.isfinite(value) or value <= 0:
                raise InvalidParamsError('sojourn_mean/{0}={1!r} must be positive'.format(name, value))
        if not np.isfinite(self.sojourn_shape) or self.sojourn_shape <= 0:
            raise InvalidParamsError('sojourn_shape must be positive')
        if int(self.detection_delay) != self.detection_delay or self.detection_delay < 1:
            raise InvalidParamsError('detection_delay must be an integer >= 1')
        return self

    def with_overrides(self, **overrides):
        unknown = sorted(set(overrides) - set(OVERRIDABLE))
        if unknown:
            raise OverrideError('Parameters cannot be overridden on restart: {0}'.format(', '.join(unknown)))
        values = {name: float(value) for name, value in overrides.items()}
        try:
            return replace(self, **values).validate()
        except InvalidParamsError as e:
            raise OverrideError(str(e))

    def to_vector(self):
        return np.array([self.transmission_rate, self.frac_E_to_P, self.frac_P_to_Sm,
                         self.frac_H_to_C, self.frac_C_to_D,
                         self.rel_infectiousness_symptomatic, self.rel_infectiousness_detected]
                        + list(self.detection_prob)
                        + [self.detection_delay]
                        + list(self.sojourn_mean)
                        + [self.sojourn_shape], dtype='<f8')

    @classmethod
    def from_vector(cls, vector):
        v = [float(x) for x in vector]
        if len(v) != 21:
            raise InvalidParamsError('Parameter vector has {0} entries, expected 21'.format(len(v)))
        return cls(transmission_rate=v[0], frac_E_to_P=v[1], frac_P_to_Sm=v[2],
                   frac_H_to_C=v[3], frac_C_to_D=v[4],
                   rel_infectiousness_symptomatic=v[5], rel_infectiousness_detected=v[6],
                   detection_prob=tuple(v[7:11]), detection_delay=int(v[11]),
                   sojourn_mean=tuple(v[12:20]), sojourn_shape=v[20])

    @classmethod
    def from_mapping(cls, mapping):
        """Build from a config section; nested dicts name their states."""
        values = dict(mapping or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InvalidParamsError('Unknown simulator parameters: {0}'.format(', '.join(unknown)))
        defaults = cls()
        if isinstance(values.get('detection_prob'), dict):
            given = values['detection_prob']
            values['detection_prob'] = tuple(float(given.get(name, default))
                                             for name, default in zip(DETECTION_STATES, defaults.detection_prob))
        if isinstance(values.get('sojourn_mean'), dict):
            given = values['sojourn_mean']
            values['sojourn_mean'] = tuple(float(given.get(name, default))
                                           for name, default in zip(SOJOURN_STATES, defaults.sojourn_mean))
        for name in ('detection_prob', 'sojourn_mean'):
            if name in values:
                values[name] = tuple(float(x) for x in values[name])
        if 'detection_delay' in values:
            values['detection_delay'] = int(values['detection_delay'])
        return cls(**values).validate()

    def to_mapping(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out['detection_prob'] = dict(zip(DETECTION_STATES, self.detection_prob))
        out['sojourn_mean'] = dict(zip(SOJOURN_STATES, self.sojourn_mean))
        return out


@lru_cache(maxsize=256)
def sojourn_pmf(shape, mean):
    """Discretized gamma over whole days 1..max; day 1 absorbs [0, 1.5)."""
    dist = stats.gamma(shape, scale=mean / shape)
    max_days = max(1, int(np.ceil(dist.ppf(1.0 - 1e-6))))
    cdf = dist.cdf(np.arange(1, max_days + 1) + 0.5)
    pmf = np.diff(np.concatenate(([0.0], cdf)))
    pmf[-1] += 1.0 - cdf[-1]
    pmf = pmf / pmf.sum()
    pmf.setflags(write=False)
    return pmf


def infectiousness_weights(params):
    w = np.zeros(N_COMPARTMENTS)
    rs = params.rel_infectiousness_symptomatic
    rd = params.rel_infectiousness_detected
    w[Compartment.A_u] = 1.0
    w[Compartment.A_d] = rd
    w[Compartment.P_u] = 1.0
    w[Compartment.P_d] = rd
    w[Compartment.Sm_u] = rs
    w[Compartment.Sm_d] = rs * rd
    w[Compartment.Ss_u] = rs
    w[Compartment.Ss_d] = rs * rd
    return w


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(eq=False)
class ModelState:
    params: SimParams
    population: int
    occupancy: np.ndarray
    day: int
    seed: int
    rng: np.random.Generator
    events: dict = field(default_factory=dict)
    ledger: list = field(default_factory=list)
    history: list = field(default_factory=list)
    origin: int = 0

    @property
    def rng_state(self):
        return self.rng.bit_generator.state

    def pending_events(self):
        """Sorted (day, source, target, count) tuples."""
        return [(day, src, dst, count)
                for day in sorted(self.events)
                for (src, dst), count in sorted(self.events[day].items())
                if count]

    def check_invariants(self):
        if int(self.occupancy.sum()) != self.population:
            raise SimulationError('Population not conserved on day {0}: {1} != {2}'.format(
                self.day, int(self.occupancy.sum()), self.population))
        if (self.occupancy < 0).any():
            raise SimulationError('Negative occupancy on day {0}'.format(self.day))
        for day, _, _, count in self.pending_events():
            if day <= self.day or count < 0:
                raise SimulationError('Stale event for day {0} at day {1}'.format(day, self.day))
        return True

    def __eq__(self, other):
        if not isinstance(other, ModelState):
            return NotImplemented
        return (self.params == other.params
                and self.population == other.population
                and np.array_equal(self.occupancy, other.occupancy)
                and self.day == other.day
                and self.seed == other.seed
                and self.rng_state == other.rng_state
                and self.pending_events() == other.pending_events()
                and [tuple(r) for r in self.ledger] == [tuple(r) for r in other.ledger]
                and [tuple(h) for h in self.history] == [tuple(h) for h in other.history]
                and self.origin == other.origin)


@dataclass
class Trajectory:
    days: np.ndarray
    exposed: np.ndarray
    cases: np.ndarray
    deaths: np.ndarray
    recovered: np.ndarray
    census: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.days)

    def cumulative_deaths(self):
        return np.cumsum(self.deaths)

    def slice(self, start_day, end_day):
        mask = (self.days >= start_day) & (self.days <= end_day)
        return Trajectory(days=self.days[mask], exposed=self.exposed[mask], cases=self.cases[mask],
                          deaths=self.deaths[mask], recovered=self.recovered[mask],
                          census=None if self.census is None else self.census[mask],
                          provenance=dict(self.provenance))

    @classmethod
    def from_ledger(cls, state, start_day=1, end_day=None):
        end_day = state.day if end_day is None else end_day
        rows = np.asarray(state.ledger[start_day - 1:end_day], dtype=np.int64).reshape(-1, len(LEDGER_COLUMNS))
        return cls(days=np.arange(start_day, start_day + len(rows), dtype=np.int64),
                   exposed=rows[:, 0], cases=rows[:, 1], deaths=rows[:, 2], recovered=rows[:, 3],
                   provenance=_provenance(state))


class _DayTally(object):
    __slots__ = ('exposed', 'cases', 'deaths', 'recovered')

    def __init__(self):
        self.exposed = 0
        self.cases = 0
        self.deaths = 0
        self.recovered = 0


def _provenance(state):
    return {'seed': state.seed, 'history': [tuple(h) for h in state.history]}


def init_state(population, initial_exposed, params, seed):
    population = int(population)
    initial_exposed = int(initial_exposed)
    if population < 1:
        raise ValueError('population must be positive')
    if not 0 <= initial_exposed <= population:
        raise ValueError('initial_exposed={0} outside [0, {1}]'.format(initial_exposed, population))
    params.validate()
    occupancy = np.zeros(N_COMPARTMENTS, dtype=np.int64)
    occupancy[Compartment.S] = population - initial_exposed
    occupancy[Compartment.E] = initial_exposed
    state = ModelState(params=params, population=population, occupancy=occupancy, day=0,
                       seed=int(seed), rng=make_rng(seed),
                       history=[(0, float(params.transmission_rate), int(seed))])
    _enter(state, Compartment.E, initial_exposed, 0, _DayTally())
    return state


def force_of_infection(state):
    return float(state.occupancy @ infectiousness_weights(state.params))


def exposure_probability(state):
    lam = force_of_infection(state)
    if lam <= 0 or state.params.transmission_rate <= 0:
        return 0.0
    return float(-np.expm1(-state.params.transmission_rate * lam / state.population))


def advance(state, until_day):
    """Simulate days ``state.day + 1 .. until_day`` in place.

    Returns the state and the Trajectory of the simulated days.
    """
    until_day = int(until_day)
    if until_day > MAX_DAY:
        raise OverflowError('Day counter overflow: {0}'.format(until_day))
    if until_day < state.day:
        raise ValueError('Cannot advance backwards from day {0} to {1}'.format(state.day, until_day))
    n_days = until_day - state.day
    outputs = np.zeros((n_days, len(LEDGER_COLUMNS)), dtype=np.int64)
    census = np.zeros((n_days, N_COMPARTMENTS), dtype=np.int64)
    first = state.day + 1
    for i, day in enumerate(range(first, until_day + 1)):
        tally = _DayTally()
        _step_day(state, day, tally)
        outputs[i] = (tally.exposed, tally.cases, tally.deaths, tally.recovered)
        census[i] = state.occupancy
    trajectory = Trajectory(days=np.arange(first, until_day + 1, dtype=np.int64),
                            exposed=outputs[:, 0], cases=outputs[:, 1],
                            deaths=outputs[:, 2], recovered=outputs[:, 3],
                            census=census, provenance=_provenance(state))
    return state, trajectory


def _push(state, day, src, dst, count):
    bucket = state.events.setdefault(int(day), {})
    key = (int(src), int(dst))
    bucket[key] = bucket.get(key, 0) + int(count)


def _schedule(state, day, src, dst, duration_counts):
    for duration, count in enumerate(duration_counts, start=1):
        if count:
            _push(state, day + duration, src, dst, count)


def _enter(state, comp, n, day, tally):
    """Draw branches, sojourns and detections for ``n`` arrivals in ``comp``.

    The arrivals must already be counted in ``state.occupancy[comp]``.
    """
    if n <= 0 or comp in ABSORBING:
        return
    comp = Compartment(comp)
    params = state.params
    rng = state.rng
    first, attr, second = BRANCHES[comp]
    if attr is None:
        groups = ((first, n),)
    else:
        k = int(rng.binomial(n, getattr(params, attr)))
        groups = ((first, k), (second, n - k))
    pmf = sojourn_pmf(params.sojourn_shape, params.sojourn_mean[SOJOURN_INDEX[comp]])
    detect = DETECTABLE.get(comp)
    for dst, size in groups:
        if size == 0:
            continue
        if detect is None:
            _schedule(state, day, comp, dst, rng.multinomial(size, pmf))
            continue
        twin, index = detect
        detected = int(rng.binomial(size, params.detection_prob[index]))
        _schedule(state, day, comp, dst, rng.multinomial(size - detected, pmf))
        if not detected:
            continue
        twin_dst = DETECTED_TWIN.get(dst, dst)
        for duration, count in enumerate(rng.multinomial(detected, pmf), start=1):
            if not count:
                continue
            # detection never comes later than the day before exit; a zero delay relabels at once
            delay = min(params.detection_delay, duration - 1)
            if delay == 0:
                state.occupancy[comp] -= count
                state.occupancy[twin] += count
                tally.cases += int(count)
            else:
                _push(state, day + delay, comp, twin, count)
            _push(state, day + duration, twin, twin_dst, count)


def _step_day(state, day, tally):
    occ = state.occupancy
    # exposure pressure comes from the occupancy before today's transitions
    p_exposure = exposure_probability(state)
    due = state.events.pop(day, {})
    for src, dst in sorted(due):
        count = due[(src, dst)]
        if not count:
            continue
        occ[src] -= count
        occ[dst] += count
        # relabelling u -> d counts as a case, the individual keeps its exit
        if (src, dst) in DETECTION_PAIRS:
            tally.cases += count
            continue
        if dst == Compartment.D:
            tally.deaths += count
        elif dst == Compartment.R:
            tally.recovered += count
        _enter(state, dst, count, day, tally)
    susceptible = int(occ[Compartment.S])
    if susceptible and p_exposure > 0:
        exposed = int(state.rng.binomial(susceptible, p_exposure))
        if exposed:
            occ[Compartment.S] -= exposed
            occ[Compartment.E] += exposed
            tally.exposed += exposed
            _enter(state, Compartment.E, exposed, day, tally)
    if occ.min() < 0:
        raise SimulationError('Negative occupancy on day {0}: {1}'.format(day, occ.tolist()))
    state.day = day
    state.ledger.append((tally.exposed, tally.cases, tally.deaths, tally.recovered))


def save_checkpoint(state, params=None):
    """Serialize ``state`` with ``params`` (defaults to the state's own)."""
    params = state.params if params is None else params
    try:
        state.check_invariants()
        rng = state.rng_state
        if rng.get('bit_generator') != 'PCG64':
            raise SerializationError('Unsupported bit generator {0}'.format(rng.get('bit_generator')))
        content = CheckpointContent(
            params=params.to_vector(),
            day=int(state.day),
            population=int(state.population),
            seed=int(state.seed),
            occupancy=np.asarray(state.occupancy, dtype=np.int64),
            rng_state=int(rng['state']['state']),
            rng_inc=int(rng['state']['inc']),
            rng_has_uint32=int(rng['has_uint32']),
            rng_uinteger=int(rng['uinteger']),
            ledger=np.asarray(state.ledger, dtype=np.int64).reshape(-1, len(LEDGER_COLUMNS)),
            history=list(state.history),
            events=state.pending_events(),
            origin=int(state.origin),
        )
        return pack_checkpoint(content)
    except SimulationError as e:
        raise SerializationError('Refusing to checkpoint inconsistent state: {0}'.format(e))


def restore(checkpoint, overrides=None, seed=None):
    """Rebuild a ModelState, applying restart overrides to future draws only.

    ``overrides`` may name any of OVERRIDABLE and ``seed``; a new seed
    reseeds the random stream.
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.from_bytes(checkpoint)
    overrides = dict(overrides or {})
    if SEED_KEY in overrides:
        override_seed = overrides.pop(SEED_KEY)
        if seed is not None and override_seed != seed:
            raise OverrideError('Conflicting seeds {0} and {1}'.format(override_seed, seed))
        seed = override_seed
    content = checkpoint.content()
    params = SimParams.from_vector(content.params).validate()
    if overrides:
        params = params.with_overrides(**overrides)
    bit_generator = np.random.PCG64()
    bit_generator.state = {
        'bit_generator': 'PCG64',
        'state': {'state': content.rng_state, 'inc': content.rng_inc},
        'has_uint32': content.rng_has_uint32,
        'uinteger': content.rng_uinteger,
    }
    state = ModelState(params=params, population=content.population,
                       occupancy=np.array(content.occupancy, dtype=np.int64),
                       day=content.day, seed=content.seed,
                       rng=np.random.Generator(bit_generator),
                       ledger=[tuple(int(x) for x in row) for row in content.ledger],
                       history=[tuple(h) for h in content.history],
                       origin=content.origin)
    for day, src, dst, count in content.events:
        _push(state, day, src, dst, count)
    if seed is not None:
        state.seed = int(seed)
        state.rng = make_rng(seed)
    if overrides or seed is not None:
        # a restart: later reruns identify their source by this checksum
        state.origin = checkpoint.checksum
        state.history.append((state.day, float(params.transmission_rate), int(state.seed)))
    state.check_invariants()
    return state
