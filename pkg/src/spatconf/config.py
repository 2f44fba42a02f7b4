"""TOML configuration files.

A file may hold ``[analysis]``, ``[columns]`` and ``[simulation]`` tables and a
top-level ``schema_version``.  Values given on the command line override it.
"""
from __future__ import annotations

import sys
from dataclasses import fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .application import AnalysisConfig
from .exceptions import ValidationError
from .simulation import ScenarioSpec, preset

SCHEMA_VERSION = 1
SECTIONS = ("analysis", "columns", "simulation")


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(Path(path), "rb") as fh:
            data = tomllib.load(fh)
    except OSError as err:
        raise ValidationError(f"cannot read config {path!r}: {err.strerror}") from err
    except tomllib.TOMLDecodeError as err:
        raise ValidationError(f"invalid TOML in {path!r}: {err}") from err
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {version!r}")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    return data


def _check_keys(section: str, values: dict, allowed) -> None:
    bad = set(values) - set(allowed)
    if bad:
        raise ValidationError(f"unknown keys in [{section}]: {sorted(bad)}")


def analysis_config(data: dict, **overrides) -> AnalysisConfig:
    values = dict(data.get("analysis", {}))
    values.update({k: v for k, v in overrides.items() if v is not None})
    _check_keys("analysis", values, [f.name for f in fields(AnalysisConfig)])
    if values.get("basis_size") == 0:
        values["basis_size"] = None
    return AnalysisConfig(**values)


def scenario_spec(name: str, data: dict, **overrides) -> ScenarioSpec:
    values = dict(data.get("simulation", {}))
    values.update({k: v for k, v in overrides.items() if v is not None})
    values.pop("scenario", None)
    _check_keys("simulation", values, [f.name for f in fields(ScenarioSpec) if f.name != "name"])
    n = values.pop("n", 1000)
    return preset(name, n=n, **values)


def column_map(data: dict) -> dict:
    return dict(data.get("columns", {}))
