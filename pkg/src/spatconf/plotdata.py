"""Tidy plot-data files: ``series,x,y,group`` CSV plus a JSON manifest."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from .application import Report
from .bias import SweepPoint
from .estimators import CapSweepResult
from .exceptions import OutputError, ValidationError
from .simulation import CappedGridStudy, LambdaSweepStudy, StudySummary

PLOT_COLUMNS = ("series", "x", "y", "group")
SCHEMA_VERSION = 1


def fmt_float(v) -> str:
    """Shortest text that parses back to the same double."""
    return repr(float(v))


def _rows_study(s: StudySummary):
    for r in s.records:
        if r.status == "ok":
            yield "error", r.replicate, r.error, r.estimator
            yield "mse_fitted", r.replicate, r.mse_fitted, r.estimator


def _rows_lambda_sweep(s: LambdaSweepStudy):
    for lam, b in zip(s.lambda_grid, s.spatial_bias):
        yield "bias", lam, b, "spatial"
        yield "bias", lam, s.nonspatial_bias, "nonspatial"
    yield "median_lambda", s.median_lambda, s.bias_at_median, "spatial"


def _rows_sweep_points(points):
    for p in points:
        yield "bias", p.lam, p.spatial_bias, "spatial"
        yield "bias", p.lam, p.nonspatial_bias, "nonspatial"


def _rows_cap_sweep(s: CapSweepResult):
    for cap, fit in zip(s.caps, s.fits):
        if fit is not None:
            x = cap.k if cap.mode.value == "highest_k" else cap.start
            yield "estimate", x, fit.beta_hat, cap.mode.value


def _rows_report(r: Report):
    for m in r.months:
        for cap, fit in m.caps:
            yield "cap_estimate", cap.k, m.scale(fit.beta_hat), f"month {m.month}"
        for cap, fit, _ in m.windows:
            yield "window_estimate", cap.start, m.scale(fit.beta_hat), f"month {m.month}"


def _rows_capped_grid(g: CappedGridStudy):
    for (k, a), summ in g.results.items():
        for name, est in summ.estimators.items():
            if name.startswith("capped:"):
                yield "capped_bias", int(name.split(":")[1]), est.mean_bias, f"k={k},a={a:g}"


def plot_rows(obj) -> list[tuple]:
    if isinstance(obj, StudySummary):
        rows = _rows_study(obj)
    elif isinstance(obj, LambdaSweepStudy):
        rows = _rows_lambda_sweep(obj)
    elif isinstance(obj, CapSweepResult):
        rows = _rows_cap_sweep(obj)
    elif isinstance(obj, Report):
        rows = _rows_report(obj)
    elif isinstance(obj, CappedGridStudy):
        rows = _rows_capped_grid(obj)
    elif isinstance(obj, (list, tuple)) and all(isinstance(p, SweepPoint) for p in obj):
        rows = _rows_sweep_points(obj)
    else:
        raise ValidationError(f"no plot data for {type(obj).__name__}")
    return list(rows)


def _config_echo(obj) -> dict:
    cfg = getattr(obj, "spec", None) or getattr(obj, "config", None)
    if cfg is not None and is_dataclass(cfg):
        return _jsonable(asdict(cfg))
    return {}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def emit_plot_data(obj, path, extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``plot_data.csv`` and ``manifest.json`` into the directory ``path``."""
    out = Path(path)
    rows = plot_rows(obj)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "plot_data.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PLOT_COLUMNS)
            for series, x, y, group in rows:
                w.writerow([series, fmt_float(x), fmt_float(y), group])
        config = _config_echo(obj)
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "kind": type(obj).__name__,
            "config": config,
            "seed": config.get("seed"),
            "rows": len(rows),
            "files": [csv_path.name],
        }
        if extra:
            manifest.update(_jsonable(extra))
        man_path = out / "manifest.json"
        with open(man_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as err:
        raise OutputError(f"cannot write plot data to {os.fspath(out)!r}: {err.strerror}") from err
    return csv_path, man_path


def read_plot_data(path) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != PLOT_COLUMNS:
            raise ValidationError("not a plot-data file")
        return [(s, float(x), float(y), g) for s, x, y, g in reader]
