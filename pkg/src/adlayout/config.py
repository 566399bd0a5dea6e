"""TOML config files: read, merge under CLI flags, echo into run directories."""

from __future__ import annotations

import sys
from importlib.resources import files
from pathlib import Path
from typing import Any, Mapping, Union

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

FIXTURES = "fixtures"


def fixture_path(*parts: str) -> Path:
    """Path of a fixture shipped inside the package."""
    return Path(str(files("adlayout").joinpath("data", *parts)))


def resolve(value, *fixture_parts: str) -> Path:
    """``value`` as a path, with the literal ``fixtures`` meaning the shipped fixture."""
    return fixture_path(*fixture_parts) if str(value) == FIXTURES else Path(value)


def read_toml(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def merge(file_values: Mapping[str, Any], cli_values: Mapping[str, Any]) -> dict:
    """Config-file values overridden by every CLI value that was actually given."""
    merged = dict(file_values)
    merged.update({k: v for k, v in cli_values.items() if v is not None})
    return merged


def toml_safe(values: Mapping[str, Any]) -> dict:
    """Drop ``None`` and turn paths and tuples into TOML-friendly values."""
    out = {}
    for key, value in values.items():
        if value is None:
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, tuple):
            value = list(value)
        elif isinstance(value, Mapping):
            value = toml_safe(value)
        out[key] = value
    return out


def dumps(values: Mapping[str, Any]) -> str:
    return tomli_w.dumps(toml_safe(values))
