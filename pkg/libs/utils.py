import logging
import os
import sys
import tempfile

import numpy as np
from termcolor import colored

LEVEL_COLORS = {
    logging.DEBUG: 'blue',
    logging.INFO: 'green',
    logging.WARNING: 'yellow',
    logging.ERROR: 'red',
    logging.CRITICAL: 'red',
}


class ColorFormatter(logging.Formatter):

    def format(self, record):
        message = super(ColorFormatter, self).format(record)
        color = LEVEL_COLORS.get(record.levelno)
        if color is None:
            return message
        return message.replace(record.levelname, colored(record.levelname, color), 1)


def setup_logging(verbose=False, stream=None):
    """Install a single coloured console handler on the root logger."""
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(ColorFormatter('%(asctime)s %(levelname)s %(name)s: %(message)s',
                                        datefmt='%H:%M:%S'))
    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    return root


def seed_sequence(master_seed, *key):
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))


def derive_rng(master_seed, *key):
    """Independent generator for the stream identified by ``key``.

    Streams depend only on (master seed, key), never on call order.
    """
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *key)))


def derive_seed(master_seed, *key):
    return int(seed_sequence(master_seed, *key).generate_state(1, np.uint32)[0])


def derive_seeds(master_seed, count, *key):
    return [int(s) for s in seed_sequence(master_seed, *key).generate_state(count, np.uint32)]


def atomic_write(path, data, mode='wb', encoding=None):
    """Write through a sibling temp file then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        newline = None if 'b' in mode else ''
        with os.fdopen(fd, mode, encoding=encoding, newline=newline) as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def make_generator(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.Generator(np.random.PCG64(int(seed_or_rng)))
