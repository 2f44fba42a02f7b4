"""Month-by-month analysis of station data and Table-1 style reporting.

Each month is analysed independently: response and covariate are standardised,
the configured models are fitted, and the covariate effect is converted back to
the original scale as ``beta * sd(y) / sd(x)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .bases import build_gp_exponential, build_thin_plate
from .estimators import (
    SIGNIFICANCE_LEVEL,
    CapSpec,
    FitResult,
    as_decomposition,
    cap_sweep,
    fit_nonspatial,
    select_lambda_gcv,
)
from .exceptions import ValidationError
from .spectral import SpatialDesign
from .stations import MIN_STATIONS, StationDataset

MODELS = ("nonspatial", "spatial", "capped_spatial_plus", "sliding_window")
BASIS_KINDS = ("thin_plate", "gp_exponential")


@dataclass(frozen=True)
class AnalysisConfig:
    """Settings of the monthly analysis.

    ``basis_size = None`` uses as many basis functions as stations.  Sliding
    windows cover ``window_length`` consecutive frequencies; ``window_start`` is
    counted from the highest frequency.
    """

    models: tuple = MODELS
    cap_min: int = 5
    cap_max: int = 15
    window_length: int = 15
    window_start_min: int = 1
    window_start_max: int = 60
    basis_kind: str = "thin_plate"
    basis_size: Optional[int] = None
    kappa: float = 0.1
    standardize: bool = True
    seed: int = 0
    output_dir: str = "."
    min_stations: int = MIN_STATIONS
    level: float = SIGNIFICANCE_LEVEL

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        bad = set(self.models) - set(MODELS)
        if bad or not self.models:
            raise ValidationError(f"unknown or empty model set: {sorted(bad)}")
        if not 1 <= self.cap_min <= self.cap_max:
            raise ValidationError("need 1 <= cap_min <= cap_max")
        if self.window_length < 1 or not 1 <= self.window_start_min <= self.window_start_max:
            raise ValidationError("invalid window settings")
        if self.basis_kind not in BASIS_KINDS:
            raise ValidationError(f"basis_kind must be one of {BASIS_KINDS}")
        if self.basis_size is not None and self.basis_size < 3:
            raise ValidationError("basis_size must be >= 3")
        if self.basis_size is not None and self.cap_max > self.basis_size:
            raise ValidationError("cap range exceeds the basis dimension")
        if not self.kappa > 0:
            raise ValidationError("kappa must be positive")
        if self.min_stations < 5:
            raise ValidationError("min_stations must be >= 5")
        if not 0 < self.level < 1:
            raise ValidationError("level must lie in (0, 1)")

    @property
    def caps(self) -> list[CapSpec]:
        return [CapSpec.highest(k) for k in range(self.cap_min, self.cap_max + 1)]

    def windows(self, p: int) -> list[CapSpec]:
        last = min(self.window_start_max, p - self.window_length + 1)
        return [CapSpec.window(s, self.window_length) for s in range(self.window_start_min, last + 1)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TableRow:
    month: int
    model: str
    beta: float
    p_value: float
    aic: float
    rmse: float

    def render(self) -> str:
        return format_table_row(self.month, self.model, self.beta, self.p_value, self.aic, self.rmse)


def format_table_row(month, model, beta, p_value, aic, rmse) -> str:
    """``month & model & beta & p & AIC & RMSE`` with 7, 7, 4 and 4 decimals."""
    return f"{month} & {model} & {beta:.7f} & {p_value:.7f} & {aic:.4f} & {rmse:.4f}"


@dataclass
class MonthResult:
    month: int
    n: int
    sd_response: float
    sd_covariate: float
    fits: dict = field(default_factory=dict)
    caps: list = field(default_factory=list)
    windows: list = field(default_factory=list)
    stable: Optional[bool] = None
    spatial_consistent: Optional[bool] = None
    first_significant_window: Optional[int] = None

    def scale(self, beta: float) -> float:
        return beta * self.sd_response / self.sd_covariate


@dataclass
class Report:
    config: AnalysisConfig
    months: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def table(self) -> str:
        return "\n".join(r.render() for r in self.rows) + ("\n" if self.rows else "")


def _design(coords: np.ndarray, config: AnalysisConfig) -> SpatialDesign:
    n = coords.shape[0]
    if config.basis_kind == "gp_exponential":
        return build_gp_exponential(coords, config.kappa)
    size = n if config.basis_size is None else min(config.basis_size, n)
    return build_thin_plate(coords, size, seed=config.seed)


def _standardize(v: np.ndarray):
    sd = float(np.std(v, ddof=1))
    if not sd > 0:
        raise ValidationError("variable is constant within the month")
    return (v - v.mean()) / sd, sd


def _row(month: int, label: str, fit: FitResult, res: MonthResult) -> TableRow:
    return TableRow(month, label, res.scale(fit.beta_hat), fit.p_value, fit.aic, fit.rmse)


def _stability(fits: list[tuple[CapSpec, FitResult]]):
    """Spread of significant capped estimates and their pooled standard error."""
    if len(fits) < 2:
        return None, None
    b = np.array([f.beta_hat for _, f in fits])
    se = math.sqrt(float(np.mean([f.beta_variance for _, f in fits])))
    return float(b.max() - b.min()), se


def analyse_month(data: StationDataset, month: int, config: AnalysisConfig) -> MonthResult:
    y, x = data.response, data.covariate
    if config.standardize:
        y, sy = _standardize(y)
        x, sx = _standardize(x)
    else:
        sy = sx = 1.0
    res = MonthResult(month, len(data), sy, sx)
    decomp = as_decomposition(_design(data.coords, config))
    if "nonspatial" in config.models:
        res.fits["non-spatial"] = fit_nonspatial(y, x)
    if "spatial" in config.models or "capped_spatial_plus" in config.models:
        res.fits["spatial"] = select_lambda_gcv(y, x, decomp)[1]
    if "capped_spatial_plus" in config.models:
        sweep = cap_sweep(y, x, decomp, None, config.caps, config.level)
        res.caps = [(c, f) for c, f in zip(sweep.caps, sweep.fits) if f is not None]
        sig = [(c, f) for c, f, s in zip(sweep.caps, sweep.fits, sweep.significant) if s]
        spread, se = _stability(sig)
        if spread is not None:
            res.stable = spread < 2 * se
            mean = float(np.mean([f.beta_hat for _, f in sig]))
            sp = res.fits["spatial"]
            res.spatial_consistent = abs(sp.beta_hat - mean) < 2 * math.sqrt(sp.beta_variance + se ** 2)
    if "sliding_window" in config.models:
        windows = config.windows(decomp.p)
        if windows:
            sweep = cap_sweep(y, x, decomp, None, windows, config.level)
            res.windows = [(c, f, s) for c, f, s in zip(sweep.caps, sweep.fits, sweep.significant)
                           if f is not None]
            starts = [c.start for c, _, s in res.windows if s]
            res.first_significant_window = min(starts) if starts else None
    return res


def monthly_analysis(dataset: StationDataset, config: AnalysisConfig) -> Report:
    """Analyse every month; months with too few stations are skipped with a notice."""
    report = Report(config)
    for month in dataset.months:
        data = dataset.subset(month)
        if len(data) < config.min_stations:
            msg = f"month {month}: {len(data)} stations < {config.min_stations}; skipped"
            warnings.warn(msg, RuntimeWarning)
            report.skipped.append((month, msg))
            continue
        res = analyse_month(data, month, config)
        report.months.append(res)
        for label, fit in res.fits.items():
            if label == "spatial" and "spatial" not in config.models:
                continue
            report.rows.append(_row(month, label, fit, res))
        for cap, fit in res.caps:
            report.rows.append(_row(month, cap.describe(), fit, res))
        for cap, fit, sig in res.windows:
            if sig:
                report.rows.append(_row(month, cap.describe(), fit, res))
    return report


# ---------------------------------------------------------------- synthetic months

SYNTHETIC_KINDS = ("unconfounded_high", "low_only")


def synthetic_stations(n_stations: int = 336, seed: int = 0):
    """Station ids and coordinates scattered over a Germany-sized box."""
    rng = np.random.default_rng(seed)
    lon = rng.uniform(6.0, 15.0, n_stations)
    lat = rng.uniform(47.5, 55.0, n_stations)
    ids = np.array([f"S{i:04d}" for i in range(n_stations)], dtype=object)
    return ids, lon, lat


def make_synthetic_month(kind: str, n_stations: int = 336, beta: float = -0.4, sigma: float = 0.2,
                         seed: int = 0, month: int = 1, config: AnalysisConfig | None = None,
                         clear_top: int = 20):
    """One month with known truth, built in the analysis frequency basis.

    ``unconfounded_high``: the confounder lives on the 20 lowest frequencies and
    ``x`` has extra content on the 40 highest.  ``low_only``: same confounder,
    but ``x`` has no mass on the ``clear_top`` highest frequencies.
    Returns ``(dataset, truth)`` where ``truth`` holds ``beta``, ``x``, ``z``.
    """
    from .stations import StationDataset, project_unit_square

    if kind not in SYNTHETIC_KINDS:
        raise ValidationError(f"kind must be one of {SYNTHETIC_KINDS}")
    config = AnalysisConfig() if config is None else config
    ids, lon, lat = synthetic_stations(n_stations, seed)
    coords = project_unit_square(lon, lat)
    decomp = as_decomposition(_design(coords, config))
    p, s = decomp.p, decomp.split
    rng = np.random.default_rng(seed + 1)
    rank = np.arange(p)
    # smooth spectral decay from low to high frequency
    base = rng.standard_normal(p) * 3.0 / (1.0 + rank / 10.0)
    xi_x = np.zeros(decomp.n)
    xi_z = np.zeros(decomp.n)
    xi_x[s:] = base
    xi_z[s:s + 20] = 0.8 * base[:20] + 0.5 * rng.standard_normal(20)
    if kind == "unconfounded_high":
        xi_x[s + p - 40:] += 1.5 * rng.standard_normal(40)
    else:
        xi_x[s + p - 60:s + p - clear_top] += 0.5 * rng.standard_normal(40)
        xi_x[s + p - clear_top:] = 0.0
    x = decomp.eigenbasis @ xi_x + 10.0
    z = decomp.eigenbasis @ xi_z
    y = 8.0 + beta * x + z + sigma * rng.standard_normal(decomp.n)
    data = StationDataset(ids, lon, lat, np.full(n_stations, month), y, x, 0, coords)
    return data, {"beta": beta, "x": x, "z": z}
