"""Command line front end.

Subcommands::

    spatconf simulate --scenario S1 [--config f.toml] [--out DIR]
    spatconf analyze  --data stations.csv [--config f.toml] [--out DIR]
    spatconf bias     --design design.npz --x x.csv --z z.csv [--lam L --sigma2 S]
    spatconf sweep    --kind {lambda,cap,window} ...

Errors end the process with status 2 and a single line ``error: CODE: message``
on stderr.  ``SPATCONF_OUTPUT_DIR`` sets the default output directory.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .application import analyse_month, monthly_analysis
from .bias import bias_exact, bias_lambda_sweep, bias_nonspatial, bias_spectral, lambda_limits
from .config import analysis_config, column_map, load_config, scenario_spec
from .estimators import as_decomposition
from .exceptions import OutputError, SpatConfError, ValidationError
from .plotdata import emit_plot_data, fmt_float
from .simulation import (
    SCENARIOS,
    capped_grid_study,
    lambda_sweep_study,
    run_study,
    write_records_csv,
    write_summary_csv,
)
from .spectral import ModelParams, SpatialDesign, coordinates, decompose
from .stations import ingest_csv

ENV_OUTPUT_DIR = "SPATCONF_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "spatconf_out"
EXIT_ERROR = 2


class UsageError(SpatConfError):
    code = "E_USAGE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(ENV_OUTPUT_DIR) or DEFAULT_OUTPUT_DIR
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OutputError(f"cannot create output directory {out!r}: {err.strerror}") from err
    return path


def _int_list(text: str | None):
    if text is None:
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"expected a comma-separated integer list, got {text!r}") from None


def _write_csv(path: Path, header, rows) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as err:
        raise OutputError(f"cannot write {str(path)!r}: {err.strerror}") from err


def read_vector(path) -> np.ndarray:
    """One number per line; a non-numeric first line is treated as a header."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.strip().split(",")[0] for ln in fh if ln.strip()]
    except OSError as err:
        raise ValidationError(f"cannot read {path!r}: {err.strerror}") from err
    if lines:
        try:
            float(lines[0])
        except ValueError:
            lines = lines[1:]
    try:
        return np.array([float(v) for v in lines], dtype=float)
    except ValueError as err:
        raise ValidationError(f"{path}: {err}") from None


def read_design(path) -> SpatialDesign:
    """``.npz`` archive with arrays ``basis`` and ``penalty`` (``locations`` optional)."""
    try:
        with np.load(path) as arc:
            basis = arc["basis"]
            penalty = arc["penalty"]
            loc = arc["locations"] if "locations" in arc.files else np.arange(basis.shape[0])[:, None]
    except (OSError, ValueError) as err:
        raise ValidationError(f"cannot read design {path!r}: {err}") from err
    except KeyError as err:
        raise ValidationError(f"design file lacks array {err}") from None
    return SpatialDesign(loc, basis, penalty)


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    if args.scenario not in SCENARIOS:
        raise ValidationError(f"unknown scenario {args.scenario!r}; expected one of {SCENARIOS}")
    cfg = load_config(args.config)
    spec = scenario_spec(args.scenario, cfg, n=args.n, replicates=args.replicates, seed=args.seed)
    out = _out_dir(args)
    caps = _int_list(args.caps) or [5, 10, 15, 20, 25, 30, 40, 50]
    if args.estimators:
        names = [s.strip() for s in args.estimators.split(",") if s.strip()]
    elif spec.name == "capped":
        names = ["spatial", "spatial_plus"] + [f"capped:{c}" for c in caps]
    else:
        names = ["spatial", "nonspatial", "spatial_plus"]
    summary = run_study(spec, names, n_jobs=args.jobs)
    write_records_csv(summary, out / "records.csv")
    write_summary_csv(summary, out / "summary.csv")
    emit_plot_data(summary, out)
    for s in summary.estimators.values():
        print(f"{s.estimator}: mean bias {s.mean_bias:.4f} (se {s.se:.4f}), mse {s.mse:.4f}, "
              f"failed {s.n_failed}")
    return 0


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    config = analysis_config(cfg, seed=args.seed)
    data = ingest_csv(args.data, column_map(cfg))
    if data.dropped:
        print(f"notice: dropped {data.dropped} rows with missing values", file=sys.stderr)
    out = _out_dir(args)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        report = monthly_analysis(data, config)
    for _, msg in report.skipped:
        print(f"notice: {msg}", file=sys.stderr)
    try:
        (out / "table.txt").write_text(report.table(), encoding="utf-8")
    except OSError as err:
        raise OutputError(f"cannot write table: {err.strerror}") from err
    _write_csv(out / "months.csv",
               ("month", "n", "stable", "spatial_consistent", "first_significant_window"),
               [(m.month, m.n, m.stable, m.spatial_consistent, m.first_significant_window)
                for m in report.months])
    emit_plot_data(report, out)
    sys.stdout.write(report.table())
    return 0


def cmd_bias(args) -> int:
    design = read_design(args.design)
    x, z = read_vector(args.x), read_vector(args.z)
    if x.shape != (design.n,) or z.shape != (design.n,):
        raise ValidationError(f"x and z must have {design.n} values")
    params = ModelParams(args.lam, args.sigma2)
    decomp = decompose(design, params)
    rep = bias_exact(x, z, decomp)
    rows = [("bias", rep.bias), ("correlation_term", rep.correlation_term),
            ("relative_size_term", rep.relative_size_term),
            ("nonspatial_bias", bias_nonspatial(x, z))]
    cx, cz = coordinates(decomp, x), coordinates(decomp, z)
    try:
        rows.append(("bias_spectral", bias_spectral(cx, cz, decomp.weights)))
        lim = lambda_limits(cx, cz, decomp.penalty_eigenvalues)
        rows += [("limit_at_zero", lim.limit_at_zero), ("limit_at_infinity", lim.limit_at_infinity)]
    except ValidationError as err:
        print(f"notice: {err.code}: {err}", file=sys.stderr)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("quantity", "value"))
    for k, v in rows:
        w.writerow((k, fmt_float(v)))
    return 0


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    if args.kind == "lambda":
        grid = np.logspace(np.log10(args.lam_min), np.log10(args.lam_max), args.points)
        if args.design:
            if not (args.x and args.z):
                raise ValidationError("--x and --z are required with --design")
            design = read_design(args.design)
            pts = bias_lambda_sweep(read_vector(args.x), read_vector(args.z), design, args.sigma2, grid)
            rows = [(fmt_float(p.lam), fmt_float(p.spatial_bias), fmt_float(p.nonspatial_bias))
                    for p in pts]
            emit_plot_data(pts, out)
        else:
            cfg = load_config(args.config)
            spec = scenario_spec(args.scenario, cfg, n=args.n, replicates=args.replicates, seed=args.seed)
            study = lambda_sweep_study(spec, grid)
            rows = [(fmt_float(lam), fmt_float(b), fmt_float(study.nonspatial_bias))
                    for lam, b in zip(study.lambda_grid, study.spatial_bias)]
            emit_plot_data(study, out, extra={"median_lambda": study.median_lambda,
                                              "bias_at_median": study.bias_at_median})
            print(f"median lambda_hat {study.median_lambda:.6g}, bias there {study.bias_at_median:.4f}")
        _write_csv(out / "sweep.csv", ("lambda", "spatial_bias", "nonspatial_bias"), rows)
        return 0
    if not args.data:
        raise ValidationError(f"--data is required for --kind {args.kind}")
    cfg = load_config(args.config)
    models = ("capped_spatial_plus",) if args.kind == "cap" else ("sliding_window",)
    config = analysis_config(cfg, models=models, seed=args.seed)
    data = ingest_csv(args.data, column_map(cfg))
    month = args.month if args.month is not None else data.months[0]
    res = analyse_month(data.subset(month), month, config)
    if args.kind == "cap":
        items = [(c, f, f.p_value < config.level) for c, f in res.caps]
    else:
        items = res.windows
    rows = [(c.describe(), c.k if args.kind == "cap" else c.start, fmt_float(res.scale(f.beta_hat)),
             fmt_float(f.p_value), int(bool(s))) for c, f, s in items]
    _write_csv(out / "sweep.csv", ("label", "position", "beta", "p_value", "significant"), rows)
    for r in rows:
        print(",".join(str(v) for v in r))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spatconf", description="Spatial confounding bias toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a scenario study")
    s.add_argument("--scenario", required=True)
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--n", type=int)
    s.add_argument("--replicates", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--estimators", help="comma-separated, e.g. spatial,nonspatial,capped:10")
    s.add_argument("--caps", help="caps for the capped scenario, e.g. 5,10,15")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="monthly analysis of station data")
    a.add_argument("--data", required=True)
    a.add_argument("--config")
    a.add_argument("--out")
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bias", help="exact bias for a design and vectors")
    b.add_argument("--design", required=True)
    b.add_argument("--x", required=True)
    b.add_argument("--z", required=True)
    b.add_argument("--lam", type=float, default=1.0)
    b.add_argument("--sigma2", type=float, default=1.0)
    b.set_defaults(func=cmd_bias)

    w = sub.add_parser("sweep", help="bias over smoothing, caps or windows")
    w.add_argument("--kind", required=True, choices=("lambda", "cap", "window"))
    w.add_argument("--design")
    w.add_argument("--x")
    w.add_argument("--z")
    w.add_argument("--sigma2", type=float, default=1.0)
    w.add_argument("--lam-min", type=float, default=1e-6)
    w.add_argument("--lam-max", type=float, default=1e6)
    w.add_argument("--points", type=int, default=49)
    w.add_argument("--scenario", default="S5")
    w.add_argument("--n", type=int)
    w.add_argument("--replicates", type=int)
    w.add_argument("--seed", type=int)
    w.add_argument("--data")
    w.add_argument("--month", type=int)
    w.add_argument("--config")
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required: simulate, analyze, bias or sweep")
        return args.func(args)
    except SpatConfError as err:
        msg = " ".join(str(err).split())
        print(f"error: {err.code}: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
