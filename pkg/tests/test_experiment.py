import json
import logging
import os

import numpy as np
import pandas as pd
import pytest
import yaml

from conftest import CONFIG_DIR
from EpiCalib import get_main_app
from libs import posterior_io
from libs.constants import SERIES_REPORTED, SERIES_TRUE, TARGET_CASES, TARGET_CASES_DEATHS
from libs.experiment import (ConfigError, ExperimentConfig, Schedule, ScheduleError, calibrate, emit,
                             generate_ground_truth, read_ground_truth, resummarize, summarize, verify,
                             weighted_interval, write_truth)
from libs.posterior_io import (BUNDLE_NAME, MANIFEST_NAME, OBSERVATIONS_NAME, RIBBONS_NAME, EmitError,
                               posterior_name, read_observations, read_posterior, read_ribbons)
from libs.seir_sim import advance, init_state
from libs.settings import Settings

TINY = {
    'experiment': {'name': 'tiny', 'master_seed': 3, 'truth_seed': 5, 'targets': 'cases', 'parallelism': 1,
                   'horizon': 25, 'forecast_days': 0},
    'population': {'size': 3000, 'initial_exposed': 20},
    'truth': {'theta_schedule': [[0, 0.35], [16, 0.25]], 'rho_schedule': [[0, 0.6], [16, 0.8]]},
    'windows': {'boundaries': [15, 25], 'burn_in': 0},
    'budget': {'n': 10, 'replicates': 2, 'resample': 10},
}


def tiny_settings(tmp_path, **sections):
    data = json.loads(json.dumps(TINY))
    data['experiment']['out_dir'] = str(tmp_path / 'out')
    for key, value in sections.items():
        data[key].update(value)
    return Settings(data=data)


def tiny_config(tmp_path, **sections):
    return ExperimentConfig.from_settings(tiny_settings(tmp_path, **sections))


def write_config(tmp_path, **sections):
    path = str(tmp_path / 'tiny.cfg')
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(tiny_settings(tmp_path, **sections).data, f)
    return path


@pytest.fixture
def restore_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


def test_schedule_lookup():
    schedule = Schedule.parse([[0, 0.3], [34, 0.27], [48, 0.25]])
    assert schedule.value_on(1) == 0.3
    assert schedule.value_on(33) == 0.3
    assert schedule.value_on(34) == 0.27
    assert schedule.value_on(100) == 0.25
    np.testing.assert_allclose(schedule.daily([33, 34, 47, 48]), [0.3, 0.27, 0.27, 0.25])
    assert schedule.segments(50) == [(1, 33, 0.3), (34, 47, 0.27), (48, 50, 0.25)]
    assert schedule.segments(20) == [(1, 20, 0.3)]


@pytest.mark.parametrize('items', [[], [[1, 0.3]], [[0, 0.3], [0, 0.2]], [['x', 'y']]])
def test_schedule_errors(items):
    with pytest.raises(ScheduleError):
        Schedule.parse(items)


def test_desk_config_loads():
    config = ExperimentConfig.from_settings(Settings.from_file(os.path.join(CONFIG_DIR, 'desk.cfg')))
    assert config.population == 100000
    assert config.plan.boundaries == (33, 47, 61, 75)
    assert config.plan.n == 1000
    assert config.plan.replicates == 10
    assert config.plan.resample_size == 1000
    assert config.sim_params.detection_prob == (0.05, 0.1, 0.4, 0.9)
    assert config.theta_schedule.value_on(62) == 0.4
    assert not config.use_deaths


def test_scale_overrides_budget():
    settings = Settings.from_file(os.path.join(CONFIG_DIR, 'desk.cfg'))
    config = ExperimentConfig.from_settings(settings, scale='full')
    assert (config.plan.n, config.plan.replicates, config.plan.resample_size) == (25000, 20, 10000)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_settings(settings, scale='cluster')


def test_shipped_configs_are_valid():
    names = sorted(os.listdir(CONFIG_DIR))
    assert {'full_single.cfg', 'desk_single.cfg'} <= set(names)
    for name in names:
        config = ExperimentConfig.from_settings(Settings.from_file(os.path.join(CONFIG_DIR, name)))
        if name.endswith('_single.cfg'):
            assert config.plan.boundaries == (33,)
            assert config.horizon == 33
        else:
            assert len(config.plan) == 4
            assert config.plan.horizon == 75


def test_single_window_preset_budget():
    config = ExperimentConfig.from_settings(Settings.from_file(os.path.join(CONFIG_DIR, 'full_single.cfg')))
    assert config.plan.windows() == [(1, 1, 33)]
    assert (config.plan.n, config.plan.replicates, config.plan.resample_size) == (25000, 20, 10000)
    assert config.theta_schedule.value_on(20) == 0.3


@pytest.mark.parametrize('sections', [
    {'experiment': {'targets': 'hospitalizations'}},
    {'population': {'initial_exposed': 5000}},
    {'truth': {'rho_schedule': [[0, 1.5]]}},
    {'windows': {'boundaries': [25, 15]}},
    {'experiment': {'horizon': 20}},
    {'experiment': {'parallelism': 0}},
])
def test_invalid_configs(tmp_path, sections):
    with pytest.raises(ConfigError):
        tiny_config(tmp_path, **sections)


def test_missing_setting(tmp_path):
    settings = tiny_settings(tmp_path)
    del settings.data['windows']['boundaries']
    with pytest.raises(ConfigError, match='windows/boundaries'):
        ExperimentConfig.from_settings(settings)


def test_ground_truth_follows_schedules(tmp_path):
    config = tiny_config(tmp_path)
    truth = generate_ground_truth(config)
    assert truth.days.tolist() == list(range(1, 26))
    assert (truth.reported_cases <= truth.true_cases).all()
    assert truth.theta[14] == 0.35 and truth.theta[15] == 0.25
    assert truth.rho[14] == 0.6 and truth.rho[15] == 0.8
    again = generate_ground_truth(config)
    np.testing.assert_array_equal(truth.reported_cases, again.reported_cases)


def test_constant_schedule_truth_is_a_plain_run(tmp_path):
    config = tiny_config(tmp_path, truth={'theta_schedule': [[0, 0.3]], 'rho_schedule': [[0, 1.0]]})
    truth = generate_ground_truth(config)
    _, trajectory = advance(init_state(3000, 20, config.sim_params.with_overrides(transmission_rate=0.3), 5), 25)
    np.testing.assert_array_equal(truth.true_cases, trajectory.cases)
    np.testing.assert_array_equal(truth.reported_cases, trajectory.cases)


def test_truth_files_round_trip(tmp_path):
    config = tiny_config(tmp_path)
    truth = generate_ground_truth(config)
    write_truth(truth, config.out_dir)
    observations = read_observations(os.path.join(config.out_dir, OBSERVATIONS_NAME))
    np.testing.assert_array_equal(observations.cases, truth.reported_cases)
    np.testing.assert_array_equal(observations.deaths, truth.deaths)
    loaded = read_ground_truth(os.path.join(config.out_dir, 'ground_truth.csv'))
    np.testing.assert_array_equal(loaded.theta, truth.theta)
    np.testing.assert_array_equal(loaded.true_cases, truth.true_cases)


def test_summarize_orders_quantiles():
    rng = np.random.default_rng(0)
    bundle = {SERIES_REPORTED: rng.integers(0, 100, size=(50, 6)), SERIES_TRUE: rng.integers(0, 200, size=(50, 6))}
    summary = summarize(bundle, np.arange(1, 7))
    assert len(summary.ribbons) == 12
    ribbon = summary.ribbon(SERIES_REPORTED)
    for lower, upper in (('q05', 'q25'), ('q25', 'q50'), ('q50', 'q75'), ('q75', 'q95')):
        assert (ribbon[lower] <= ribbon[upper]).all()
    with pytest.raises(EmitError):
        summarize({SERIES_REPORTED: np.zeros((0, 6))}, np.arange(1, 7))


def test_weighted_interval():
    lo, hi = weighted_interval([0.1, 0.2, 0.3], [1, 98, 1])
    assert lo == hi == 0.2
    lo, hi = weighted_interval(np.arange(100), np.ones(100))
    assert lo == pytest.approx(4.95)
    assert hi == pytest.approx(94.05)


def _summary_with_cloud():
    summary = summarize({SERIES_REPORTED: np.ones((4, 3), dtype=int)}, np.arange(1, 4))
    summary.clouds = {1: pd.DataFrame({'theta': [0.3], 'rho': [0.6], 'weight_class': [4]}),
                      2: pd.DataFrame({'theta': [0.25], 'rho': [0.8], 'weight_class': [4]})}
    return summary


def test_emit_refuses_empty_cloud(tmp_path):
    summary = _summary_with_cloud()
    summary.clouds[2] = summary.clouds[2].iloc[0:0]
    with pytest.raises(EmitError):
        emit(summary, str(tmp_path / 'out'))
    assert not (tmp_path / 'out').exists()


def test_emit_failure_leaves_no_partial_files(tmp_path, monkeypatch):
    calls = []
    write_frame = posterior_io.write_frame

    def failing(path, frame, columns):
        calls.append(path)
        if len(calls) == 2:
            raise OSError('disk full')
        return write_frame(path, frame, columns)

    monkeypatch.setattr(posterior_io, 'write_frame', failing)
    out = tmp_path / 'out'
    with pytest.raises(EmitError, match='disk full'):
        emit(_summary_with_cloud(), str(out))
    assert os.listdir(str(out)) == []


def test_emit_writes_manifest(tmp_path):
    files = emit(_summary_with_cloud(), str(tmp_path))
    names = sorted(os.path.basename(p) for p in files)
    assert names == sorted([RIBBONS_NAME, posterior_name(1), posterior_name(2), BUNDLE_NAME, MANIFEST_NAME])
    with open(str(tmp_path / MANIFEST_NAME), encoding='utf-8') as f:
        manifest = json.load(f)
    assert manifest['software'] == 'epicalib'
    assert MANIFEST_NAME in manifest['files']


def test_calibrate_end_to_end(tmp_path):
    config = tiny_config(tmp_path, experiment={'forecast_days': 4})
    truth = generate_ground_truth(config)
    output = calibrate(config, truth.observations)
    out = config.out_dir
    for name in (RIBBONS_NAME, BUNDLE_NAME, MANIFEST_NAME, posterior_name(1), posterior_name(2),
                 'particles_window_1.csv', 'particles_window_2.csv'):
        assert os.path.exists(os.path.join(out, name)), name
    assert os.path.isdir(os.path.join(out, 'checkpoints'))
    ribbons = read_ribbons(os.path.join(out, RIBBONS_NAME))
    assert ribbons['day'].max() == 29
    for window in (1, 2):
        cloud = read_posterior(os.path.join(out, posterior_name(window)))
        assert cloud['weight_class'].sum() == 10
        assert ((cloud['theta'] >= 0.1) & (cloud['theta'] <= 0.5)).all()
    assert [d['window'] for d in output.summary.diagnostics] == [1, 2]

    rebuilt = resummarize(out, 2)
    pd.testing.assert_frame_equal(rebuilt.ribbons, ribbons, check_dtype=False)

    table, widths = verify(out, truth, config.plan)
    assert table['window'].tolist() == [1, 2]
    assert table['theta'].tolist() == pytest.approx([0.35, 0.25])
    assert set(widths) == {'reported_cases', 'true_cases', 'deaths'}


def test_calibrate_with_deaths(tmp_path):
    config = tiny_config(tmp_path, experiment={'targets': TARGET_CASES_DEATHS})
    assert config.use_deaths
    output = calibrate(config, generate_ground_truth(config).observations)
    assert len(output.result.windows) == 2


def test_calibrate_needs_full_observations(tmp_path):
    config = tiny_config(tmp_path)
    observations = generate_ground_truth(config).observations.window(1, 20)
    with pytest.raises(ValueError):
        calibrate(config, observations)


def test_cli_round_trip(tmp_path, restore_logging):
    path = write_config(tmp_path)
    out = str(tmp_path / 'cli')
    assert get_main_app(['truth', '--config', path, '--out', out, '-q']) == 0
    assert os.path.exists(os.path.join(out, OBSERVATIONS_NAME))
    assert get_main_app(['calibrate', '--config', path, '--out', out, '-q']) == 0
    assert os.path.exists(os.path.join(out, MANIFEST_NAME))
    assert get_main_app(['summarize', '--config', path, '--out', out, '-q']) == 0
    assert get_main_app(['verify', '--config', path, '--out', out, '-q']) in (0, 1)


def test_cli_calibrate_synthesizes_missing_observations(tmp_path, restore_logging):
    path = write_config(tmp_path)
    out = str(tmp_path / 'fresh')
    assert get_main_app(['calibrate', '--config', path, '--out', out, '--seed', '9', '-q']) == 0
    with open(os.path.join(out, MANIFEST_NAME), encoding='utf-8') as f:
        assert json.load(f)['config']['master_seed'] == 9


def test_cli_reports_handled_errors(tmp_path, restore_logging):
    assert get_main_app(['truth', '--config', str(tmp_path / 'absent.cfg'), '-q']) == 2
    path = write_config(tmp_path, windows={'boundaries': [25, 15]})
    assert get_main_app(['truth', '--config', path, '-q']) == 2


def _directory_bytes(root):
    out = {}
    for dirpath, _, filenames in os.walk(root):
        for name in filenames:
            path = os.path.join(dirpath, name)
            with open(path, 'rb') as f:
                out[os.path.relpath(path, root)] = f.read()
    return out


def test_identical_runs_write_identical_files(tmp_path, restore_logging):
    path = write_config(tmp_path)
    for name in ('a', 'b'):
        assert get_main_app(['calibrate', '--config', path, '--out', str(tmp_path / name), '-q']) == 0
    assert _directory_bytes(str(tmp_path / 'a')) == _directory_bytes(str(tmp_path / 'b'))


def _desk_run(tmp_path, seed, targets):
    settings = Settings.from_file(os.path.join(CONFIG_DIR, 'desk.cfg'))
    settings['experiment/master_seed'] = seed
    settings['experiment/targets'] = targets
    settings['experiment/parallelism'] = os.cpu_count() or 1
    settings['experiment/out_dir'] = str(tmp_path / '{0}-{1}'.format(targets, seed))
    config = ExperimentConfig.from_settings(settings)
    truth = generate_ground_truth(config)
    calibrate(config, truth.observations)
    return verify(config.out_dir, truth, config.plan)


@pytest.mark.slow
def test_desk_coverage_and_ribbon_width(tmp_path):
    covered = {TARGET_CASES: np.zeros(4, dtype=int), TARGET_CASES_DEATHS: np.zeros(4, dtype=int)}
    narrower = 0
    for seed in range(1, 11):
        widths = {}
        for targets in (TARGET_CASES, TARGET_CASES_DEATHS):
            table, widths[targets] = _desk_run(tmp_path, seed, targets)
            covered[targets] += table['theta_covered'].to_numpy(int)
        if widths[TARGET_CASES_DEATHS][SERIES_REPORTED] <= widths[TARGET_CASES][SERIES_REPORTED]:
            narrower += 1
    for targets, counts in covered.items():
        assert (counts >= 8).all(), (targets, counts.tolist())
    assert narrower >= 7


@pytest.mark.slow
def test_desk_calibration_is_deterministic(tmp_path, restore_logging):
    config = os.path.join(CONFIG_DIR, 'desk.cfg')
    for name in ('a', 'b'):
        assert get_main_app(['calibrate', '--config', config, '--out', str(tmp_path / name), '-q']) == 0
    assert _directory_bytes(str(tmp_path / 'a')) == _directory_bytes(str(tmp_path / 'b'))
