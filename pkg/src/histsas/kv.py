"""Line-oriented ``section.key = value`` text used by configs, reports and checkpoints."""

from __future__ import annotations

import dataclasses
import typing
from typing import Any, Iterable, Union

from .errors import ConfigurationError


def format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def _parse_scalar(text: str, tp) -> Any:
    text = text.strip()
    if tp is bool:
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    if tp is str:
        return text
    raise TypeError(f"unsupported field type {tp!r}")


def parse_value(text: str, tp) -> Any:
    """Parse ``text`` according to a type hint (scalars, tuples, Optional)."""
    origin = typing.get_origin(tp)
    if origin is Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if text.strip().lower() == "none":
            return None
        return parse_value(text, args[0])
    if origin in (tuple, list):
        args = typing.get_args(tp)
        items = [t for t in text.split(",") if t.strip()] if text.strip() else []
        if len(args) == 2 and args[1] is Ellipsis:
            vals = [_parse_scalar(t, args[0]) for t in items]
        else:
            if len(items) != len(args):
                raise ValueError(f"expected {len(args)} comma-separated values, got {text!r}")
            vals = [_parse_scalar(t, a) for t, a in zip(items, args)]
        return tuple(vals) if origin is tuple else vals
    return _parse_scalar(text, tp)


def parse_lines(lines: Iterable[str]) -> list[tuple[str, str]]:
    """``(key, raw value)`` pairs; blank lines and ``#`` comments skipped."""
    out = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out.append((key.strip(), value.strip()))
    return out


def dataclass_lines(obj, section: str) -> list[str]:
    return [
        f"{section}.{f.name} = {format_value(getattr(obj, f.name))}"
        for f in dataclasses.fields(obj)
    ]


def dataclass_from_items(cls, items: dict[str, str], section: str):
    """Build ``cls`` from raw strings; unknown keys are rejected by name."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in names:
            raise ConfigurationError(f"unknown key '{section}.{key}'")
        try:
            kwargs[key] = parse_value(raw, hints[key])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad value for '{section}.{key}': {exc}") from None
    return cls(**kwargs)
