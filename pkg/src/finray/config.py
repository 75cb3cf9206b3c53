"""Human-readable key-value config files.

Format: one ``dotted.key = value`` per line, ``#`` comments, blank lines
ignored. Values parse as bool/int/float/string; comma-separated lists of
numbers parse to tuples. Dumping is sorted so identical mappings produce
identical bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


def parse_scalar(text: str):
    s = text.strip()
    if s.lower() in ("true", "false"):
        return s.lower() == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def parse_value(text: str):
    s = text.strip()
    if "," in s:
        return tuple(parse_scalar(p) for p in s.split(",") if p.strip())
    return parse_scalar(s)


def parse_config(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = parse_value(val)
    return out


def load_config(path: str | Path) -> dict[str, Any]:
    return parse_config(Path(path).read_text())


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value)
    if hasattr(value, "item"):  # numpy scalars
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(mapping: Mapping[str, Any]) -> str:
    lines = [f"{k} = {format_value(mapping[k])}" for k in sorted(mapping)]
    return "\n".join(lines) + "\n"


def save_config(mapping: Mapping[str, Any], path: str | Path) -> None:
    Path(path).write_text(dump_config(mapping))


def section(mapping: Mapping[str, Any], prefix: str) -> dict[str, Any]:
    """Keys under ``prefix.`` with the prefix stripped."""
    p = prefix + "."
    return {k[len(p):]: v for k, v in mapping.items() if k.startswith(p)}


def config_hash(mapping: Mapping[str, Any]) -> str:
    return hashlib.sha256(dump_config(mapping).encode()).hexdigest()


def apply_mapping(instance, mapping: Mapping[str, Any]):
    """Return a dataclass copy with fields overridden from a flat mapping.

    Unknown keys raise; values are coerced to the field's current type when
    the current value is not None.
    """
    names = {f.name for f in dataclasses.fields(instance)}
    updates = {}
    for key, value in mapping.items():
        if key not in names:
            raise ConfigError(f"unknown config key {key!r} for {type(instance).__name__}")
        current = getattr(instance, key)
        if isinstance(current, bool):
            value = bool(value)
        elif isinstance(current, int) and not isinstance(value, bool):
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        elif isinstance(current, tuple) and not isinstance(value, tuple):
            value = (value,)
        updates[key] = value
    return dataclasses.replace(instance, **updates)
