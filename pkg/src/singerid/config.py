"""Run configuration: flat dotted-key JSON plus flag overrides.

One table of known keys with defaults; a config file may set any subset,
`--set key=value` flags override the file, and anything else is rejected
up front. The digest is a SHA-256 over the canonical JSON encoding
(sorted keys, compact separators), so key order never matters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import UsageError

DEFAULT_CONFIG = {
    "cache.dir": "features",
    "corpus.quota.train": 4,
    "corpus.quota.val": 1,
    "corpus.quota.test": 1,
    "train.model": "crnn",
    "train.data": "origin",
    "train.lr": 1e-4,
    "train.batch_size": 16,
    "train.max_epochs": 200,
    "train.patience": 20,
    "train.standardize": True,
    "train.conv_dropout": 0.1,
    "train.head_dropout": 0.3,
    "embed.perplexity": 30.0,
    "embed.iters": 1000,
}


def _coerce(key: str, raw: str):
    """Parse a flag-override literal to the type of the key's default."""
    default = DEFAULT_CONFIG[key]
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return type(default)(raw)
    except ValueError as exc:
        raise UsageError(f"{key}: {exc}") from None


def _check_value(key: str, value) -> None:
    default = DEFAULT_CONFIG[key]
    if isinstance(default, bool) != isinstance(value, bool):
        raise UsageError(f"{key}: expected {type(default).__name__}, "
                         f"got {value!r}")
    if isinstance(default, float) and isinstance(value, int) \
            and not isinstance(value, bool):
        return  # JSON integers are fine where floats are expected
    if not isinstance(value, type(default)):
        raise UsageError(f"{key}: expected {type(default).__name__}, "
                         f"got {value!r}")


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def digest(self) -> str:
        canon = json.dumps(self.values, sort_keys=True,
                           separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Merge defaults <- config file <- `key=value` override strings."""
    values = dict(DEFAULT_CONFIG)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"{path}: top level must be an object")
        for key, value in loaded.items():
            if key not in DEFAULT_CONFIG:
                raise UsageError(f"{path}: unknown config key {key!r}")
            if isinstance(value, (dict, list)):
                raise UsageError(f"{path}: {key}: values must be scalars")
            _check_value(key, value)
            if isinstance(DEFAULT_CONFIG[key], float):
                value = float(value)
            values[key] = value
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"override {item!r} is not key=value")
        if key not in DEFAULT_CONFIG:
            raise UsageError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    config = RunConfig(values)
    config.digest  # force canonical encoding early; all values JSON-safe
    return config
