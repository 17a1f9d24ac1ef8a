import os

import yaml

from libs.constants import DEFAULT_ENCODING

SEPARATOR = '/'


class Settings(object):
    """Nested configuration addressed with slash-separated keys.

    ``settings['budget/n']`` reads ``data['budget']['n']``.
    """

    def __init__(self, path=None, data=None):
        self.data = data if data is not None else {}
        self.path = path

    def __setitem__(self, key, value):
        node = self.data
        parts = key.split(SEPARATOR)
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value

    def __getitem__(self, key):
        node = self.data
        for part in key.split(SEPARATOR):
            if not isinstance(node, dict) or part not in node:
                raise KeyError(key)
            node = node[part]
        return node

    def __contains__(self, key):
        try:
            self[key]
        except KeyError:
            return False
        return True

    def get(self, key, default=None):
        try:
            return self[key]
        except KeyError:
            return default

    def save(self):
        if self.path:
            with open(self.path, 'w', encoding=DEFAULT_ENCODING) as f:
                yaml.safe_dump(self.data, f, sort_keys=True, default_flow_style=None)
                return True
        return False

    def load(self):
        if not self.path or not os.path.exists(self.path):
            return False
        with open(self.path, 'r', encoding=DEFAULT_ENCODING) as f:
            data = yaml.safe_load(f)
        if not isinstance(data, dict):
            raise ValueError('Settings file {0} does not hold a mapping'.format(self.path))
        self.data = data
        return True

    def reset(self):
        if self.path and os.path.exists(self.path):
            os.remove(self.path)
        self.data = {}
        self.path = None

    @classmethod
    def from_file(cls, path):
        settings = cls(path)
        if not settings.load():
            raise FileNotFoundError(path)
        return settings
