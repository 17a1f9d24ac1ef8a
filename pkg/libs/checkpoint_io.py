#!/usr/bin/env python
# -*- coding: utf8 -*-
"""
Binary checkpoint files.

Layout (little-endian throughout)::

    magic     8 bytes   b'EPICKPT\\x00'
    version   uint16
    flags     uint16
    sections  repeated: tag (4 bytes) + uint64 length + payload
    checksum  uint64    blake2b-64 of every preceding byte
"""
import hashlib
import os
import struct
from collections import namedtuple

import numpy as np

from libs.utils import atomic_write

CKPT_EXT = '.ckpt'
MAGIC = b'EPICKPT\x00'
FORMAT_VERSION = 1

_HEADER = struct.Struct('<8sHH')
_SECTION = struct.Struct('<4sQ')
_CHECKSUM = struct.Struct('<Q')
# day, population, seed, checksum of the checkpoint last restarted from (0 if none)
_META = struct.Struct('<qqQQ')
_RNG = struct.Struct('<4QII')
_MASK64 = (1 << 64) - 1

TAG_PARAMS = b'PARM'
TAG_META = b'META'
TAG_OCCUPANCY = b'OCCU'
TAG_RNG = b'RNGS'
TAG_LEDGER = b'LEDG'
TAG_HISTORY = b'HIST'
TAG_EVENTS = b'EVTS'
SECTION_ORDER = (TAG_PARAMS, TAG_META, TAG_OCCUPANCY, TAG_RNG, TAG_LEDGER, TAG_HISTORY, TAG_EVENTS)

LEDGER_WIDTH = 4
HISTORY_DTYPE = np.dtype([('day', '<i8'), ('theta', '<f8'), ('seed', '<u8')])
EVENT_DTYPE = np.dtype([('day', '<i8'), ('src', 'u1'), ('dst', 'u1'), ('count', '<i8')])

CheckpointContent = namedtuple('CheckpointContent', [
    'params', 'day', 'population', 'seed', 'occupancy',
    'rng_state', 'rng_inc', 'rng_has_uint32', 'rng_uinteger',
    'ledger', 'history', 'events', 'origin',
], defaults=(0,))


class CheckpointFileError(Exception):
    pass


class ChecksumError(CheckpointFileError):
    pass


class CheckpointFormatError(CheckpointFileError):
    pass


class SerializationError(CheckpointFileError):
    pass


def checksum(data):
    digest = hashlib.blake2b(data, digest_size=8).digest()
    return _CHECKSUM.unpack(digest)[0]


def _section(tag, payload):
    return _SECTION.pack(tag, len(payload)) + payload


def pack_checkpoint(content):
    try:
        params = np.ascontiguousarray(content.params, dtype='<f8')
        occupancy = np.ascontiguousarray(content.occupancy, dtype='<i8')
        ledger = np.ascontiguousarray(content.ledger, dtype='<i8').reshape(-1, LEDGER_WIDTH)
        history = np.array([tuple(h) for h in content.history], dtype=HISTORY_DTYPE)
        events = np.array([tuple(e) for e in content.events], dtype=EVENT_DTYPE)
        events = np.sort(events, order=('day', 'src', 'dst'))
        rng = _RNG.pack(content.rng_state >> 64, content.rng_state & _MASK64,
                        content.rng_inc >> 64, content.rng_inc & _MASK64,
                        content.rng_has_uint32, content.rng_uinteger)
        payloads = {
            TAG_PARAMS: params.tobytes(),
            TAG_META: _META.pack(content.day, content.population, content.seed, content.origin),
            TAG_OCCUPANCY: occupancy.tobytes(),
            TAG_RNG: rng,
            TAG_LEDGER: ledger.tobytes(),
            TAG_HISTORY: history.tobytes(),
            TAG_EVENTS: events.tobytes(),
        }
    except (struct.error, ValueError, TypeError, OverflowError) as e:
        raise SerializationError('Cannot serialize checkpoint: {0}'.format(e))
    body = _HEADER.pack(MAGIC, FORMAT_VERSION, 0)
    body += b''.join(_section(tag, payloads[tag]) for tag in SECTION_ORDER)
    data = body + _CHECKSUM.pack(checksum(body))
    return Checkpoint(data, _unpack(data))


def _unpack(data):
    if len(data) < _HEADER.size + _CHECKSUM.size:
        raise CheckpointFormatError('Checkpoint truncated ({0} bytes)'.format(len(data)))
    body, (stored,) = data[:-_CHECKSUM.size], _CHECKSUM.unpack(data[-_CHECKSUM.size:])
    if checksum(body) != stored:
        raise ChecksumError('Checkpoint checksum mismatch')
    magic, version, _flags = _HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise CheckpointFormatError('Not a checkpoint (bad magic {0!r})'.format(magic))
    if version != FORMAT_VERSION:
        raise CheckpointFormatError('Unsupported checkpoint version {0}'.format(version))
    sections = {}
    offset = _HEADER.size
    while offset < len(body):
        if offset + _SECTION.size > len(body):
            raise CheckpointFormatError('Truncated section header at byte {0}'.format(offset))
        tag, length = _SECTION.unpack_from(body, offset)
        offset += _SECTION.size
        if offset + length > len(body):
            raise CheckpointFormatError('Section {0!r} overruns the file'.format(tag))
        sections[tag] = body[offset:offset + length]
        offset += length
    missing = [tag.decode('ascii') for tag in SECTION_ORDER if tag not in sections]
    if missing:
        raise CheckpointFormatError('Missing sections: {0}'.format(', '.join(missing)))
    try:
        day, population, seed, origin = _META.unpack(sections[TAG_META])
        s_hi, s_lo, i_hi, i_lo, has_uint32, uinteger = _RNG.unpack(sections[TAG_RNG])
        history = np.frombuffer(sections[TAG_HISTORY], dtype=HISTORY_DTYPE)
        events = np.frombuffer(sections[TAG_EVENTS], dtype=EVENT_DTYPE)
        return CheckpointContent(
            params=np.frombuffer(sections[TAG_PARAMS], dtype='<f8').copy(),
            day=int(day),
            population=int(population),
            seed=int(seed),
            occupancy=np.frombuffer(sections[TAG_OCCUPANCY], dtype='<i8').copy(),
            rng_state=(s_hi << 64) | s_lo,
            rng_inc=(i_hi << 64) | i_lo,
            rng_has_uint32=int(has_uint32),
            rng_uinteger=int(uinteger),
            ledger=np.frombuffer(sections[TAG_LEDGER], dtype='<i8').reshape(-1, LEDGER_WIDTH).copy(),
            history=[(int(h['day']), float(h['theta']), int(h['seed'])) for h in history],
            events=[(int(e['day']), int(e['src']), int(e['dst']), int(e['count'])) for e in events],
            origin=int(origin),
        )
    except (struct.error, ValueError) as e:
        raise CheckpointFormatError('Malformed checkpoint section: {0}'.format(e))


class Checkpoint(object):
    """Immutable checkpoint bytes with their decoded content."""

    def __init__(self, data, content):
        self.data = bytes(data)
        self._content = content

    @classmethod
    def from_bytes(cls, data):
        return cls(data, _unpack(bytes(data)))

    def content(self):
        return self._content

    @property
    def day(self):
        return self._content.day

    @property
    def checksum(self):
        return _CHECKSUM.unpack(self.data[-_CHECKSUM.size:])[0]

    def __len__(self):
        return len(self.data)

    def __eq__(self, other):
        return isinstance(other, Checkpoint) and self.data == other.data

    def __hash__(self):
        return hash(self.data)


class CheckpointWriter:

    def __init__(self, path):
        self.path = path

    def save(self, checkpoint):
        atomic_write(self.path, checkpoint.data, mode='wb')
        return self.path


class CheckpointReader:

    def __init__(self, path):
        self.path = path
        self.checkpoint = None

    def parse(self):
        if not os.path.exists(self.path):
            raise CheckpointFileError('Checkpoint file {0} does not exist'.format(self.path))
        with open(self.path, 'rb') as f:
            data = f.read()
        try:
            self.checkpoint = Checkpoint.from_bytes(data)
        except CheckpointFileError as e:
            raise type(e)('{0}: {1}'.format(self.path, e))
        return self.checkpoint

    def get_checkpoint(self):
        if self.checkpoint is None:
            self.parse()
        return self.checkpoint


def write_checkpoint(path, checkpoint):
    return CheckpointWriter(path).save(checkpoint)


def read_checkpoint(path):
    return CheckpointReader(path).get_checkpoint()
