"""Key-path structured text files.

The on-disk format used for model, scenario and plant files is UTF-8 text
with one ``dotted.key.path = value`` assignment per line.  Values are
whitespace-separated tokens: numbers parse to floats, anything else stays a
string.  ``#`` starts a comment.  Every file carries a ``schema_version``
key.  Repeated list entries use integer path segments (``script.0``,
``script.1`` ...).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def parse_config(text, source="<config>"):
    """Parse into an ordered ``{key: [tokens]}`` mapping."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'", key=key)
        entries[key] = value.split()
    return entries


def load_config(path):
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config(handle.read(), source=str(path))


def format_value(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return " ".join(format_value(item) for item in value)


def dump_config(items):
    """Serialize ``(key, value)`` pairs (or a dict) back to text."""
    pairs = items.items() if hasattr(items, "items") else items
    lines = [f"{key} = {format_value(value)}" for key, value in pairs]
    return "\n".join(lines) + "\n"


def save_config(path, items):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(dump_config(items))


class ConfigReader:
    """Typed access with unknown-key detection.

    Every read marks its key as used; :meth:`finish` raises a
    :class:`ConfigError` naming the first key that no reader consumed,
    which is how schema violations are reported with their key path.
    """

    def __init__(self, entries, source="<config>"):
        self.entries = dict(entries)
        self.source = source
        self.used = set()

    def _tokens(self, key, default):
        if key not in self.entries:
            if default is _REQUIRED:
                raise ConfigError(f"{self.source}: missing required key '{key}'", key=key)
            return None
        self.used.add(key)
        return self.entries[key]

    def str(self, key, default=None):
        tokens = self._tokens(key, default)
        if tokens is None:
            return default
        if len(tokens) != 1:
            raise ConfigError(f"{self.source}: '{key}' expects a single token", key=key)
        return tokens[0]

    def float(self, key, default=None):
        tokens = self._tokens(key, default)
        if tokens is None:
            return default
        try:
            return float(tokens[0]) if len(tokens) == 1 else self._fail(key)
        except ValueError:
            raise ConfigError(f"{self.source}: '{key}' is not a number", key=key) from None

    def int(self, key, default=None):
        value = self.float(key, default)
        if value is default and value is None:
            return default
        if value != int(value):
            raise ConfigError(f"{self.source}: '{key}' is not an integer", key=key)
        return int(value)

    def vec(self, key, size=None, default=None):
        tokens = self._tokens(key, default)
        if tokens is None:
            return None if default is None else np.asarray(default, dtype=float)
        try:
            values = np.array([float(t) for t in tokens])
        except ValueError:
            raise ConfigError(f"{self.source}: '{key}' has non-numeric entries", key=key) from None
        if size is not None and values.size != size:
            raise ConfigError(
                f"{self.source}: '{key}' expects {size} values, got {values.size}", key=key
            )
        return values

    def require_str(self, key):
        return self.str(key, default=_REQUIRED)

    def require_float(self, key):
        return self.float(key, default=_REQUIRED)

    def require_int(self, key):
        return self.int(key, default=_REQUIRED)

    def require_vec(self, key, size=None):
        tokens = self._tokens(key, _REQUIRED)
        self.entries.setdefault(key, tokens)
        return self.vec(key, size=size)

    def indexed(self, prefix):
        """Tokens of ``prefix.0``, ``prefix.1`` ... in index order."""
        rows = []
        index = 0
        while f"{prefix}.{index}" in self.entries:
            key = f"{prefix}.{index}"
            self.used.add(key)
            rows.append(self.entries[key])
            index += 1
        return rows

    def has(self, key):
        return key in self.entries

    def mark_prefix_used(self, prefix):
        for key in self.entries:
            if key == prefix or key.startswith(prefix + "."):
                self.used.add(key)

    def finish(self):
        for key in self.entries:
            if key not in self.used:
                raise ConfigError(f"{self.source}: unknown key '{key}'", key=key)

    def _fail(self, key):
        raise ConfigError(f"{self.source}: '{key}' expects a single number", key=key)


_REQUIRED = object()
