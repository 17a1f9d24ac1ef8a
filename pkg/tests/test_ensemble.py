import os

import pytest

from libs.ensemble import (INDEX_HEADER, INDEX_NAME, CheckpointStore, InitSpec, ManifestError, RunManifest,
                           StoreError, checkpoint_relpath, execute, make_entry)
from libs.seir_sim import SimParams, advance, init_state, restore, save_checkpoint


def first_window(store, init, n=12, until_day=10, parallelism=1):
    entries = [make_entry(pid, 100 + pid, until_day, None, {'transmission_rate': 0.2 + 0.02 * pid})
               for pid in range(n)]
    return RunManifest(master_seed=1, window=1, entries=entries, store_root=store.root, init=init,
                       parallelism=parallelism, chunksize=2)


def test_relpath_layout():
    assert checkpoint_relpath(3, 1234567) == os.path.join('w003', '12', '34', 'p01234567.ckpt')


def test_store_save_load_and_index(store, params):
    checkpoint = save_checkpoint(init_state(500, 5, params, seed=1))
    store.save((1, 42), checkpoint)
    assert (1, 42) in store
    assert (1, 43) not in store
    assert store.load((1, 42)) == checkpoint
    with open(os.path.join(store.root, INDEX_NAME), encoding='utf-8') as f:
        lines = f.readlines()
    assert lines[0] == INDEX_HEADER
    assert lines[1].split('\t')[:3] == ['1', '42', 'w001/00/00/p00000042.ckpt']
    reopened = CheckpointStore(store.root)
    assert reopened.refs() == [(1, 42)]


def test_store_detects_replaced_file(store, params):
    store.save((1, 0), save_checkpoint(init_state(500, 5, params, seed=1)))
    other = save_checkpoint(init_state(500, 5, params, seed=2))
    with open(store.path_for((1, 0)), 'wb') as f:
        f.write(other.data)
    with pytest.raises(StoreError, match='index checksum'):
        store.load((1, 0))
    with open(store.path_for((1, 0)), 'wb') as f:
        f.write(b'garbage')
    with pytest.raises(StoreError, match='unreadable'):
        store.load((1, 0))


def test_rebuild_index_skips_damaged_files(store, params):
    for pid in range(3):
        store.save((1, pid), save_checkpoint(init_state(500, 5, params, seed=pid)))
    with open(store.path_for((1, 1)), 'ab') as f:
        f.write(b'x')
    os.remove(store.index_path)
    assert store.rebuild_index() == 2
    assert CheckpointStore(store.root).refs() == [(1, 0), (1, 2)]


def test_gc_keeps_only_requested(store, params):
    for pid in range(4):
        store.save((1, pid), save_checkpoint(init_state(500, 5, params, seed=pid)))
    assert store.gc({(1, 1), (1, 3)}) == 2
    assert store.refs() == [(1, 1), (1, 3)]
    assert (1, 0) not in store
    assert CheckpointStore(store.root).refs() == [(1, 1), (1, 3)]


def test_execute_matches_direct_simulation(store, small_init):
    manifest = first_window(store, small_init)
    results = execute(manifest, store)
    assert list(results) == list(range(12))
    for pid, result in results.items():
        assert result.success
        assert result.checkpoint_ref == (1, pid)
        params = small_init.params.with_overrides(transmission_rate=0.2 + 0.02 * pid)
        state, trajectory = advance(init_state(2000, 20, params, 100 + pid), 10)
        assert restore(store.load((1, pid))) == state
        assert result.trajectory.cases.tolist() == trajectory.cases.tolist()
    assert store.refs() == [(1, pid) for pid in range(12)]


def test_parallel_and_inline_runs_agree(tmp_path, small_init):
    outputs = []
    for name, workers in (('inline', 1), ('pool', 4)):
        store = CheckpointStore(str(tmp_path / name))
        results = execute(first_window(store, small_init, parallelism=workers), store)
        outputs.append({pid: (r.checksum, r.trajectory.cases.tolist(), r.trajectory.deaths.tolist())
                        for pid, r in results.items()})
        outputs[-1]['bytes'] = [store.load((1, pid)).data for pid in range(12)]
    assert outputs[0] == outputs[1]


def test_rerun_reuses_and_repairs(store, small_init):
    manifest = first_window(store, small_init)
    baseline = execute(manifest, store)

    again = execute(manifest, store)
    assert all(r.reused for r in again.values())
    assert {p: r.checksum for p, r in again.items()} == {p: r.checksum for p, r in baseline.items()}

    os.remove(store.path_for((1, 3)))
    with open(store.path_for((1, 5)), 'r+b') as f:
        f.seek(30)
        f.write(b'\xff\xff')
    repaired = execute(manifest, store)
    assert not repaired[3].reused
    assert not repaired[5].reused
    assert repaired[4].reused
    for pid, result in repaired.items():
        assert result.checksum == baseline[pid].checksum
        assert result.trajectory.cases.tolist() == baseline[pid].trajectory.cases.tolist()
    assert store.load((1, 5)).checksum == baseline[5].checksum


def test_stale_checkpoint_from_other_manifest_is_replaced(store, small_init):
    execute(first_window(store, small_init), store)
    entries = [make_entry(pid, 999, 10, None, {'transmission_rate': 0.3}) for pid in range(12)]
    changed = RunManifest(master_seed=1, window=1, entries=entries, store_root=store.root, init=small_init)
    results = execute(changed, store)
    assert not any(r.reused for r in results.values())
    assert restore(store.load((1, 0))).seed == 999


def test_checkpoint_from_other_population_is_replaced(store, small_init):
    execute(first_window(store, small_init, n=3), store)
    for init in (InitSpec(2000, 35, SimParams()),
                 InitSpec(50000, 500, SimParams()),
                 InitSpec(2000, 20, SimParams(frac_C_to_D=0.9))):
        results = execute(first_window(store, init, n=3), store)
        assert not any(r.reused for r in results.values())
        state = restore(store.load((1, 0)))
        assert state.population == init.population
        assert state.params.frac_C_to_D == init.params.frac_C_to_D
        assert all(r.reused for r in execute(first_window(store, init, n=3), store).values())


def test_restart_is_redone_when_its_source_changes(store, small_init):
    execute(first_window(store, small_init, n=3), store)
    entries = [make_entry(pid, 500 + pid, 20, (1, pid), {'transmission_rate': 0.1}) for pid in range(3)]
    second = RunManifest(master_seed=1, window=2, entries=entries, store_root=store.root)
    baseline = execute(second, store)
    assert all(r.reused for r in execute(second, store).values())

    rerun = [make_entry(pid, 900 + pid, 10, None, {'transmission_rate': 0.3}) for pid in range(3)]
    execute(RunManifest(master_seed=1, window=1, entries=rerun, store_root=store.root, init=small_init), store)
    results = execute(second, store)
    assert not any(r.reused for r in results.values())
    for pid in range(3):
        assert restore(store.load((2, pid))).origin == store.load((1, pid)).checksum
        assert results[pid].checksum != baseline[pid].checksum


def test_replaced_source_checkpoint_is_refused(store, small_init):
    execute(first_window(store, small_init, n=2), store)
    with open(store.path_for((1, 0)), 'wb') as f:
        f.write(store.load((1, 1)).data)
    manifest = RunManifest(master_seed=1, window=2, entries=[make_entry(0, 5, 20, (1, 0))], store_root=store.root)
    with pytest.raises(StoreError, match='index checksum'):
        execute(manifest, store)


def test_failed_particle_does_not_stop_the_window(store, small_init):
    manifest = first_window(store, small_init, n=4)
    manifest.entries[2] = make_entry(2, 7, 10, None, {'transmission_rate': -1.0})
    results = execute(manifest, store)
    assert not results[2].success
    assert 'OverrideError' in results[2].error
    assert all(results[pid].success for pid in (0, 1, 3))
    assert (1, 2) not in store
    assert store.refs() == [(1, 0), (1, 1), (1, 3)]


def test_restart_from_checkpoints(store, small_init):
    execute(first_window(store, small_init, n=3), store)
    entries = [make_entry(pid, 500 + pid, 20, (1, pid % 3), {'transmission_rate': 0.1}) for pid in range(6)]
    manifest = RunManifest(master_seed=1, window=2, entries=entries, store_root=store.root)
    results = execute(manifest, store)
    for pid, result in results.items():
        assert result.trajectory.days.tolist() == list(range(11, 21))
        state = restore(store.load((2, pid)))
        assert state.day == 20
        assert state.history[-1] == (10, 0.1, 500 + pid)


def test_dedupe_aliases_identical_tasks(store, small_init):
    entries = [make_entry(pid, 5, 10, None, {'transmission_rate': 0.3}) for pid in range(4)]
    manifest = RunManifest(master_seed=1, window=1, entries=entries, store_root=store.root, init=small_init)
    results = execute(manifest, store, dedupe=True)
    assert {r.checkpoint_ref for r in results.values()} == {(1, 0)}
    assert store.refs() == [(1, 0)]
    assert results[3].trajectory.cases.tolist() == results[0].trajectory.cases.tolist()


def test_manifest_validation(store, small_init):
    entries = [make_entry(0, 1, 10), make_entry(0, 2, 10)]
    with pytest.raises(ManifestError, match='Duplicate'):
        RunManifest(1, 1, entries, store.root, small_init).validate(store)
    with pytest.raises(ManifestError, match='Missing source'):
        RunManifest(1, 2, [make_entry(0, 1, 20, (1, 0))], store.root).validate(store)
    with pytest.raises(ManifestError, match='init spec'):
        RunManifest(1, 1, [make_entry(0, 1, 10)], store.root).validate(store)
    with pytest.raises(ManifestError, match='parallelism'):
        RunManifest(1, 1, [make_entry(0, 1, 10)], store.root, small_init, parallelism=0).validate(store)


def test_manifest_yaml_round_trip(tmp_path, store, small_init):
    manifest = first_window(store, small_init, n=3)
    path = str(tmp_path / 'manifest.yaml')
    manifest.save(path)
    loaded = RunManifest.load(path)
    assert loaded.entries == manifest.entries
    assert loaded.init.params == manifest.init.params
    assert loaded.init.population == 2000
    with pytest.raises(ManifestError):
        RunManifest.from_dict({'window': 1})


def test_empty_manifest(store):
    assert execute(RunManifest(1, 1, [], store.root), store) == {}


def test_init_spec_defaults():
    init = InitSpec(100, 1)
    assert init.params == SimParams()
