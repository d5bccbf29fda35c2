"""Flat ``key = value`` config files mapped onto dataclasses."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from pathlib import Path


class ConfigError(ValueError):
    pass


def read_flat_config(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def _coerce(value, kind):
    if not isinstance(value, str):
        return value
    origin = typing.get_origin(kind)
    if kind is bool:
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    if origin is tuple:
        (inner, *_) = typing.get_args(kind)
        return tuple(inner(v) for v in value.replace(" ", "").split(",") if v)
    if origin is typing.Union:
        args = [a for a in typing.get_args(kind) if a is not type(None)]
        if value.lower() in ("", "none"):
            return None
        return _coerce(value, args[0])
    return value


def with_overrides(obj, values: dict, strict: bool = True):
    """Return a copy of dataclass ``obj`` with string or typed overrides applied."""
    hints = typing.get_type_hints(type(obj))
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in values.items():
        if key not in names:
            if strict:
                raise ConfigError(f"unknown config key {key!r} for {type(obj).__name__}")
            continue
        try:
            changes[key] = _coerce(value, hints[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    return dataclasses.replace(obj, **changes)


def to_flat_text(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {'' if value is None else value}")
    return "\n".join(lines) + "\n"


def fingerprint(*objs) -> str:
    """Stable short hash of one or more dataclass configs."""
    payload = json.dumps([dataclasses.asdict(o) for o in objs], sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]
