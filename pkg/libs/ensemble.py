#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Deterministic fan-out of particle simulations over a checkpoint store.

Each task restores (or initializes) one particle, advances it to the window
end and saves the new checkpoint. Tasks are independent, so the result for a
manifest does not depend on the number of workers or on completion order.
"""
import concurrent.futures
import logging
import os
import re
import time
from dataclasses import dataclass, field

import numpy as np
import yaml
from tqdm import tqdm

from libs.checkpoint_io import CKPT_EXT, CheckpointFileError, read_checkpoint, write_checkpoint
from libs.constants import DEFAULT_ENCODING
from libs.seir_sim import Compartment, SimParams, Trajectory, advance, init_state, restore, save_checkpoint
from libs.utils import atomic_write

logger = logging.getLogger(__name__)

INDEX_NAME = 'index.tsv'
INDEX_HEADER = 'window\tparticle_id\tpath\tchecksum\n'
_WINDOW_DIR = re.compile(r'^w(\d+)$')
_CKPT_FILE = re.compile(r'^p(\d+)' + re.escape(CKPT_EXT) + '$')


class ManifestError(ValueError):
    pass


class StoreError(RuntimeError):
    pass


def checkpoint_relpath(window, particle_id):
    """w<window>/<id digits 3-4>/<id digits 5-6>/p<id>.ckpt"""
    digits = '{0:08d}'.format(particle_id)
    return os.path.join('w{0:03d}'.format(window), digits[2:4], digits[4:6],
                        'p{0}{1}'.format(digits, CKPT_EXT))


class CheckpointStore(object):
    """Checkpoint files keyed by (window, particle id) with an append-only index."""

    def __init__(self, root):
        self.root = os.path.abspath(root)
        os.makedirs(self.root, exist_ok=True)
        self.index_path = os.path.join(self.root, INDEX_NAME)
        self.index = {}
        self._load_index()

    def _load_index(self):
        self.index = {}
        if not os.path.exists(self.index_path):
            return
        with open(self.index_path, 'r', encoding=DEFAULT_ENCODING) as f:
            for line_no, line in enumerate(f):
                if line_no == 0 and line == INDEX_HEADER:
                    continue
                parts = line.rstrip('\n').split('\t')
                if len(parts) != 4:
                    raise StoreError('Malformed index line {0} in {1}'.format(line_no + 1, self.index_path))
                window, pid, relpath, digest = parts
                self.index[(int(window), int(pid))] = (relpath, int(digest, 16))

    def path_for(self, ref):
        return os.path.join(self.root, checkpoint_relpath(*ref))

    def __contains__(self, ref):
        return os.path.exists(self.path_for(ref))

    def __len__(self):
        return len(self.index)

    def refs(self):
        return sorted(self.index)

    def load(self, ref):
        ref = (int(ref[0]), int(ref[1]))
        try:
            checkpoint = read_checkpoint(self.path_for(ref))
        except CheckpointFileError as e:
            raise StoreError('Checkpoint {0} unreadable: {1}'.format(ref, e))
        entry = self.index.get(ref)
        if entry is not None and entry[1] != checkpoint.checksum:
            raise StoreError('Checkpoint {0} does not match its index checksum'.format(ref))
        return checkpoint

    def save(self, ref, checkpoint):
        ref = (int(ref[0]), int(ref[1]))
        write_checkpoint(self.path_for(ref), checkpoint)
        self.record([(ref, checkpoint.checksum)])
        return ref

    def record(self, entries):
        """Append (ref, checksum) pairs to the index, sorted by ref."""
        entries = sorted(entries)
        if not entries:
            return
        new_file = not os.path.exists(self.index_path)
        lines = []
        for (window, pid), digest in entries:
            relpath = checkpoint_relpath(window, pid)
            self.index[(window, pid)] = (relpath, digest)
            lines.append('{0}\t{1}\t{2}\t{3:016x}\n'.format(window, pid, relpath.replace(os.sep, '/'), digest))
        with open(self.index_path, 'a', encoding=DEFAULT_ENCODING, newline='') as f:
            if new_file:
                f.write(INDEX_HEADER)
            f.writelines(lines)

    def _write_index(self):
        lines = [INDEX_HEADER]
        for (window, pid) in sorted(self.index):
            relpath, digest = self.index[(window, pid)]
            lines.append('{0}\t{1}\t{2}\t{3:016x}\n'.format(window, pid, relpath.replace(os.sep, '/'), digest))
        atomic_write(self.index_path, ''.join(lines), mode='w', encoding=DEFAULT_ENCODING)

    def scan(self):
        """Verified checkpoint files on disk, as {ref: checksum}."""
        found = {}
        for dirpath, dirnames, filenames in os.walk(self.root):
            dirnames.sort()
            rel = os.path.relpath(dirpath, self.root).split(os.sep)
            match = _WINDOW_DIR.match(rel[0]) if rel and rel[0] != '.' else None
            if match is None:
                continue
            for name in sorted(filenames):
                file_match = _CKPT_FILE.match(name)
                if file_match is None:
                    continue
                ref = (int(match.group(1)), int(file_match.group(1)))
                try:
                    found[ref] = read_checkpoint(os.path.join(dirpath, name)).checksum
                except CheckpointFileError as e:
                    logger.warning('Skipping damaged checkpoint %s: %s', name, e)
        return found

    def rebuild_index(self):
        found = self.scan()
        self.index = {ref: (checkpoint_relpath(*ref), digest) for ref, digest in found.items()}
        self._write_index()
        logger.info('Rebuilt checkpoint index with %d entries', len(self.index))
        return len(self.index)

    def gc(self, keep):
        """Delete every indexed checkpoint whose ref is not in ``keep``."""
        keep = {(int(w), int(p)) for w, p in keep}
        removed = 0
        for ref in sorted(set(self.index) - keep):
            path = self.path_for(ref)
            if os.path.exists(path):
                os.remove(path)
            del self.index[ref]
            removed += 1
        if removed:
            self._write_index()
        logger.debug('gc removed %d checkpoints, %d remain', removed, len(self.index))
        return removed


@dataclass
class InitSpec:
    population: int
    initial_exposed: int
    params: SimParams = field(default_factory=SimParams)


@dataclass(frozen=True)
class ManifestEntry:
    particle_id: int
    seed: int
    until_day: int
    checkpoint_ref: tuple = None
    overrides: tuple = ()

    @property
    def override_dict(self):
        return dict(self.overrides)

    def task_key(self):
        return (self.checkpoint_ref, self.overrides, self.seed, self.until_day)


def make_entry(particle_id, seed, until_day, checkpoint_ref=None, overrides=None):
    ref = None if checkpoint_ref is None else (int(checkpoint_ref[0]), int(checkpoint_ref[1]))
    return ManifestEntry(particle_id=int(particle_id), seed=int(seed), until_day=int(until_day),
                         checkpoint_ref=ref,
                         overrides=tuple(sorted((k, float(v)) for k, v in (overrides or {}).items())))


@dataclass
class RunManifest:
    master_seed: int
    window: int
    entries: list
    store_root: str
    init: InitSpec = None
    parallelism: int = 1
    chunksize: int = 16

    def validate(self, store=None):
        ids = [e.particle_id for e in self.entries]
        if len(set(ids)) != len(ids):
            seen, dupes = set(), set()
            for pid in ids:
                (dupes if pid in seen else seen).add(pid)
            raise ManifestError('Duplicate particle ids in window {0}: {1}'.format(self.window, sorted(dupes)[:10]))
        if self.parallelism < 1:
            raise ManifestError('parallelism must be >= 1')
        store = store or CheckpointStore(self.store_root)
        missing = [e.particle_id for e in self.entries
                   if e.checkpoint_ref is not None and e.checkpoint_ref not in store]
        if missing:
            raise ManifestError('Missing source checkpoints for particles {0}'.format(missing[:20]))
        if self.init is None and any(e.checkpoint_ref is None for e in self.entries):
            raise ManifestError('Entries without a checkpoint need an init spec')
        return True

    def to_dict(self):
        data = {
            'master_seed': int(self.master_seed),
            'window': int(self.window),
            'store_root': self.store_root,
            'parallelism': int(self.parallelism),
            'chunksize': int(self.chunksize),
            'entries': [{
                'particle_id': e.particle_id,
                'seed': e.seed,
                'until_day': e.until_day,
                'checkpoint_ref': None if e.checkpoint_ref is None else list(e.checkpoint_ref),
                'overrides': dict(e.overrides),
            } for e in self.entries],
        }
        if self.init is not None:
            data['init'] = {'population': self.init.population,
                            'initial_exposed': self.init.initial_exposed,
                            'params': self.init.params.to_mapping()}
        return data

    @classmethod
    def from_dict(cls, data):
        try:
            init = None
            if data.get('init'):
                spec = data['init']
                init = InitSpec(int(spec['population']), int(spec['initial_exposed']),
                                SimParams.from_mapping(spec.get('params')))
            entries = [make_entry(e['particle_id'], e['seed'], e['until_day'],
                                  e.get('checkpoint_ref'), e.get('overrides'))
                       for e in data.get('entries') or []]
            return cls(master_seed=int(data['master_seed']), window=int(data['window']),
                       entries=entries, store_root=data['store_root'], init=init,
                       parallelism=int(data.get('parallelism', 1)),
                       chunksize=int(data.get('chunksize', 16)))
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError('Invalid manifest: {0}'.format(e))

    def save(self, path):
        text = yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)
        return atomic_write(path, text, mode='w', encoding=DEFAULT_ENCODING)

    @classmethod
    def load(cls, path):
        with open(path, 'r', encoding=DEFAULT_ENCODING) as f:
            data = yaml.safe_load(f)
        if not isinstance(data, dict):
            raise ManifestError('Manifest {0} does not hold a mapping'.format(path))
        return cls.from_dict(data)


@dataclass
class ParticleResult:
    particle_id: int
    trajectory: Trajectory = None
    checkpoint_ref: tuple = None
    checksum: int = None
    reused: bool = False
    error: str = None

    @property
    def success(self):
        return self.error is None


def _read_source(store_root, ref, expected_checksum):
    checkpoint = read_checkpoint(os.path.join(store_root, checkpoint_relpath(*ref)))
    if expected_checksum is not None and checkpoint.checksum != expected_checksum:
        raise StoreError('Checkpoint {0} does not match its index checksum'.format(ref))
    return checkpoint


def _simulate_entry(task):
    """Worker body: one particle through one window. Must stay importable."""
    store_root, window, init, entry, reuse, source_checksum = task
    ref = (window, entry.particle_id)
    target = os.path.join(store_root, checkpoint_relpath(*ref))
    try:
        source = None
        if entry.checkpoint_ref is not None:
            source = _read_source(store_root, entry.checkpoint_ref, source_checksum)
            params = SimParams.from_vector(source.content().params)
        else:
            params = init.params
        if entry.overrides:
            params = params.with_overrides(**entry.override_dict)
        if reuse and os.path.exists(target):
            try:
                checkpoint = read_checkpoint(target)
                if _made_by(checkpoint.content(), entry, params, init, source):
                    start = 1 if source is None else source.day + 1
                    trajectory = Trajectory.from_ledger(restore(checkpoint), start, entry.until_day)
                    return ParticleResult(entry.particle_id, trajectory, ref, checkpoint.checksum, reused=True)
            except CheckpointFileError:
                pass
        if source is None:
            state = init_state(init.population, init.initial_exposed, params, entry.seed)
        else:
            state = restore(source, entry.override_dict, seed=entry.seed)
        state, trajectory = advance(state, entry.until_day)
        trajectory.census = None
        checkpoint = save_checkpoint(state)
        write_checkpoint(target, checkpoint)
        return ParticleResult(entry.particle_id, trajectory, ref, checkpoint.checksum)
    except (OSError, StoreError):
        raise
    except (ValueError, RuntimeError, ArithmeticError, CheckpointFileError) as e:
        return ParticleResult(entry.particle_id, error='{0}: {1}'.format(type(e).__name__, e))


def _made_by(content, entry, params, init, source):
    """Whether a stored checkpoint is exactly what ``entry`` would produce."""
    if content.day != entry.until_day or not content.history:
        return False
    day, theta, seed = content.history[-1]
    if seed != entry.seed or theta != params.transmission_rate:
        return False
    if not np.array_equal(content.params, params.to_vector()):
        return False
    if source is not None:
        return day == source.day and content.origin == source.checksum
    if len(content.history) != 1 or content.origin != 0 or content.population != init.population:
        return False
    # S only shrinks through new exposures, which the ledger counts
    exposed = int(content.ledger[:, 0].sum())
    return content.population - int(content.occupancy[Compartment.S]) - exposed == init.initial_exposed


def _indexed_checksum(store, entry):
    if entry.checkpoint_ref is None:
        return None
    indexed = store.index.get(entry.checkpoint_ref)
    return None if indexed is None else indexed[1]


def execute(manifest, store=None, progress=False, reuse=True, dedupe=False):
    """Run every manifest entry; returns {particle_id: ParticleResult}.

    Per-particle failures come back as results with ``error`` set. Store I/O
    failures propagate.
    """
    store = store or CheckpointStore(manifest.store_root)
    manifest.validate(store)
    if not manifest.entries:
        return {}
    entries = sorted(manifest.entries, key=lambda e: e.particle_id)
    aliases = {}
    if dedupe:
        first_by_key = {}
        unique = []
        for entry in entries:
            key = entry.task_key()
            if key in first_by_key:
                aliases[entry.particle_id] = first_by_key[key]
            else:
                first_by_key[key] = entry.particle_id
                unique.append(entry)
        entries = unique
    tasks = [(store.root, manifest.window, manifest.init, entry, reuse, _indexed_checksum(store, entry))
             for entry in entries]
    started = time.perf_counter()
    bar = tqdm(total=len(tasks), desc='window {0}'.format(manifest.window), unit='particle',
               disable=not progress, leave=False)
    results = {}
    try:
        if manifest.parallelism == 1:
            for task in tasks:
                result = _simulate_entry(task)
                results[result.particle_id] = result
                bar.update(1)
        else:
            with concurrent.futures.ProcessPoolExecutor(max_workers=manifest.parallelism) as executor:
                for result in executor.map(_simulate_entry, tasks, chunksize=manifest.chunksize):
                    results[result.particle_id] = result
                    bar.update(1)
    finally:
        bar.close()
    for pid, source in sorted(aliases.items()):
        original = results[source]
        results[pid] = ParticleResult(pid, original.trajectory, original.checkpoint_ref,
                                      original.checksum, original.reused, original.error)
    store.record([(r.checkpoint_ref, r.checksum) for pid, r in results.items()
                  if r.success and pid not in aliases])
    elapsed = time.perf_counter() - started
    failed = sum(1 for r in results.values() if not r.success)
    reused = sum(1 for r in results.values() if r.reused)
    logger.info('Window %d: %d particles (%d simulated, %d reused, %d failed) in %.1fs, %.0f particles/s at parallelism %d',
                manifest.window, len(results), len(tasks) - reused, reused, failed, elapsed,
                len(tasks) / elapsed if elapsed > 0 else float('inf'), manifest.parallelism)
    for pid in sorted(pid for pid, r in results.items() if not r.success)[:10]:
        logger.warning('Particle %d failed: %s', pid, results[pid].error)
    return dict(sorted(results.items()))
