"""Flat ``key = value`` run configuration files.

Values are read as JSON when possible (numbers, ``true``/``false``, ``null``,
lists, quoted strings) and as bare strings otherwise. Unknown keys are
rejected. ``RB_SEED`` in the environment overrides ``seed``.
"""

from __future__ import annotations

import dataclasses
import json
import os
import typing
from pathlib import Path

from .losses import ConfigError
from .training import RunConfig


_TYPES = typing.get_type_hints(RunConfig)


def _coerce(key: str, value):
    hint = _TYPES[key]
    args = typing.get_args(hint)
    optional = type(None) in args
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{key}: may not be null")
    base = hint if not args else next(a for a in args if a is not type(None))
    if key == "beta":
        if isinstance(value, list):
            return [float(v) for v in value]
        return float(value)
    try:
        if base is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if base is int:
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if base is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if base is str:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {getattr(base, '__name__', base)}, got {value!r}") from None
    return value


def parse_config_text(text: str) -> dict:
    known = set(RunConfig.field_names())
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        out[key] = _coerce(key, parsed)
    return out


def load_config(path: str | Path | None = None, seed: int | None = None, **overrides) -> RunConfig:
    values = parse_config_text(Path(path).read_text()) if path is not None else {}
    for key, value in overrides.items():
        if key not in RunConfig.field_names():
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, value)
    env_seed = os.environ.get("RB_SEED")
    if env_seed is not None:
        values["seed"] = _coerce("seed", int(env_seed))
    if seed is not None:
        values["seed"] = int(seed)
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def format_config(cfg: RunConfig) -> str:
    """Round-trippable text form, one ``key = value`` per line in field order."""
    lines = [f"{f.name} = {json.dumps(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"
