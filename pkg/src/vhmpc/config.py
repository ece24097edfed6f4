"""JSON config reading with located error messages."""

from __future__ import annotations

import json
from pathlib import Path


class ConfigError(ValueError):
    """A config file could not be read or does not match its schema."""


def read_json(path, what: str = "config") -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{what} {path}: cannot read ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{what} {path}: top level must be an object")
    return data


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=False) + "\n")
