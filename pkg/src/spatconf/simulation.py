"""Data-generating processes and replicate studies.

Each replicate draws locations uniformly on the unit square (or reuses one
fixed set), a Gaussian process with exponential covariance, and derives low and
high frequency fields from it.  Studies fit a set of estimators to every
replicate and summarise bias and the MSE of fitted values against ``E[y]``.
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .bases import FrequencyBasis, ThinPlateEigen, reparameterize
from .bias import bias_nonspatial
from .estimators import (
    CapSpec,
    FitResult,
    SpectralProblem,
    as_decomposition,
    capped_spatial_plus,
    fit_gls,
    fit_nonspatial,
    select_lambda_gcv,
    spatial_plus,
)
from .exceptions import NumericalError, SpatConfError, ValidationError
from .spectral import ModelParams, SpatialDesign, SpectralDecomposition

SCENARIOS = ("S1", "S2", "S3a", "S3b", "S4", "S5", "capped")
TRUTH_KINDS = ("tprs", "gp_direct")
GP_DIRECT_RANGE_FACTOR = 5.0


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of one data-generating process.

    ``xi_x`` and ``xi_z`` are the (low, high) coefficients of the frequency
    fields in ``x`` and ``z``.  ``analysis_basis`` is the size of the thin plate
    basis of the analysis model (``None``: ``n``).
    """

    name: str
    n: int = 1000
    kappa: float = 0.1
    xi_x: tuple = (1.0, 1.0)
    xi_z: tuple = (0.0, 0.5)
    sigma_x: float = 1.0
    sigma: float = 1.0
    beta_true: float = 0.5
    num_low_basis: int = 10
    num_high_basis: int = 800
    replicates: int = 100
    seed: int = 0
    cap_truth: Optional[int] = None
    amplitude_a: Optional[float] = None
    analysis_basis: Optional[int] = None
    truth: str = "tprs"
    standardize_fields: bool = True
    fixed_locations: bool = False
    high_frequency_count: int = 75
    low_band: int = 100
    fixed_lambda: Optional[float] = None

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.name!r}; expected one of {SCENARIOS}")
        if self.truth not in TRUTH_KINDS:
            raise ValidationError(f"unknown truth {self.truth!r}")
        object.__setattr__(self, "xi_x", tuple(float(v) for v in self.xi_x))
        object.__setattr__(self, "xi_z", tuple(float(v) for v in self.xi_z))
        if len(self.xi_x) != 2 or len(self.xi_z) != 2:
            raise ValidationError("xi_x and xi_z must be (low, high) pairs")
        if self.n < 10:
            raise ValidationError("n must be at least 10")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if not self.kappa > 0 or not self.sigma > 0 or self.sigma_x < 0:
            raise ValidationError("kappa and sigma must be positive, sigma_x nonnegative")
        if not 3 <= self.num_low_basis <= self.num_high_basis <= self.n:
            raise ValidationError("need 3 <= num_low_basis <= num_high_basis <= n")
        if self.analysis_basis is not None and not 3 <= self.analysis_basis <= self.n:
            raise ValidationError("analysis_basis must lie in [3, n]")
        if self.name == "capped":
            if self.cap_truth is None or self.amplitude_a is None:
                raise ValidationError("the capped scenario needs cap_truth and amplitude_a")
            if self.cap_truth < 1 or not self.amplitude_a > 0:
                raise ValidationError("cap_truth must be >= 1 and amplitude_a > 0")
            if self.low_band + self.cap_truth >= self.n:
                raise ValidationError("low band and cap leave no medium frequencies")
        if self.name in ("S3a", "S3b") and not 1 <= self.high_frequency_count < self.n:
            raise ValidationError("high_frequency_count must lie in [1, n)")
        if self.fixed_lambda is not None and not self.fixed_lambda > 0:
            raise ValidationError("fixed_lambda must be positive")

    @property
    def basis_size(self) -> int:
        return self.n if self.analysis_basis is None else self.analysis_basis

    def to_dict(self) -> dict:
        return asdict(self)


def preset(name: str, n: int = 1000, **overrides) -> ScenarioSpec:
    """Scenario defaults; basis sizes scale with ``n`` (10/800/600 at n = 1000)."""
    high = max(10, round(0.8 * n))
    base = dict(n=n, num_high_basis=high)
    if name == "S1":
        base.update(xi_x=(1, 1), xi_z=(0, 0.5), analysis_basis=round(0.6 * n))
    elif name == "S2":
        base.update(xi_x=(1, 1), xi_z=(0.5, 0), analysis_basis=round(0.6 * n))
    elif name == "S3a":
        base.update(xi_x=(0, 4), xi_z=(1, 1), analysis_basis=None)
    elif name == "S3b":
        base.update(xi_x=(0, 0.1), xi_z=(1, 0), analysis_basis=None)
    elif name == "S4":
        base.update(xi_x=(1, 1), xi_z=(0, 0.5), analysis_basis=round(0.6 * n))
    elif name == "S5":
        base.update(xi_x=(1, 1), xi_z=(0, 0.5), analysis_basis=high, replicates=20,
                    standardize_fields=False)
    elif name == "capped":
        base.update(kappa=0.5 / 3, beta_true=1.0, sigma=0.1, replicates=50, analysis_basis=None,
                    cap_truth=10, amplitude_a=2.0)
    else:
        raise ValidationError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    base.update(overrides)
    return ScenarioSpec(name=name, **base)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def exponential_cholesky(locations, kappa: float, nugget: float = 1e-10) -> np.ndarray:
    if not kappa > 0:
        raise ValidationError(f"kappa must be positive, got {kappa}")
    loc = np.asarray(locations, dtype=float)
    C = np.exp(-cdist(loc, loc) / kappa)
    C[np.diag_indices_from(C)] += nugget
    try:
        return linalg.cholesky(C, lower=True)
    except linalg.LinAlgError as err:
        raise NumericalError(f"covariance factorization failed: {err}") from err


def sample_gp(locations, kappa: float, seed=None, size: int | None = None) -> np.ndarray:
    """Unit-variance Gaussian process draw with covariance ``exp(-h / kappa)``.

    ``size`` draws several independent fields at once (columns).
    """
    L = exponential_cholesky(locations, kappa)
    rng = _rng(seed)
    if size is None:
        return L @ rng.standard_normal(L.shape[0])
    return L @ rng.standard_normal((L.shape[0], size))


def smooth_fit(design: SpatialDesign, v) -> np.ndarray:
    """Fitted values of a GCV-smoothed fit of ``v`` on a spatial design, no covariate."""
    problem = SpectralProblem(as_decomposition(design), v)
    rho, _ = problem.select_smoothing()
    return problem.result(rho).fitted


def make_frequency_fields(gp_draw, locations, num_low: int, num_high: int,
                          eigen: ThinPlateEigen | None = None):
    """Low and high frequency fields: fits of the draw with ``num_low`` and ``num_high`` thin plate bases."""
    if num_low > num_high:
        raise ValidationError("num_low must not exceed num_high")
    te = ThinPlateEigen(locations) if eigen is None else eigen
    z_low = smooth_fit(te.design(num_low), gp_draw)
    z_high = z_low.copy() if num_low == num_high else smooth_fit(te.design(num_high), gp_draw)
    return z_low, z_high


def _standardize(v: np.ndarray) -> np.ndarray:
    sd = float(np.std(v))
    if sd == 0:
        return v - v.mean()
    return (v - v.mean()) / sd


@dataclass(eq=False)
class Replicate:
    index: int
    locations: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    mean: np.ndarray
    design: Optional[SpatialDesign] = None

    @property
    def noise(self) -> np.ndarray:
        return self.y - self.mean


class _LocationCache:
    def __init__(self):
        self.key = None
        self.eigen = None
        self.frequency = None

    def get(self, loc: np.ndarray):
        key = hash(loc.tobytes())
        if key != self.key:
            self.key, self.eigen, self.frequency = key, ThinPlateEigen(loc), None
        return self.eigen

    def frequency_basis(self, loc: np.ndarray) -> FrequencyBasis:
        te = self.get(loc)
        if self.frequency is None:
            self.frequency = reparameterize(te.design(te.n))
        return self.frequency


def replicate_streams(seed: int, count: int):
    """Per-replicate generators (stream ``i`` for replicate ``i``) plus one for shared locations."""
    children = np.random.SeedSequence(seed).spawn(count + 1)
    return [np.random.default_rng(c) for c in children[:count]], np.random.default_rng(children[count])


def _fixed_locations(spec: ScenarioSpec) -> np.ndarray:
    return replicate_streams(spec.seed, spec.replicates)[1].uniform(size=(spec.n, 2))


def _draw(spec: ScenarioSpec, index: int, rng: np.random.Generator, cache: _LocationCache,
          fixed_loc: np.ndarray | None, with_design: bool) -> Replicate:
    n = spec.n
    loc = fixed_loc if fixed_loc is not None else rng.uniform(size=(n, 2))
    prep = _standardize if spec.standardize_fields else (lambda v: v - v.mean())
    design = None
    if spec.name == "capped":
        fb = cache.frequency_basis(loc)
        g = sample_gp(loc, spec.kappa, rng, size=2)
        k, lo = spec.cap_truth, spec.low_band
        low = fb.project(g[:, 0], fb.lowest(lo))
        med = fb.project(g[:, 0], fb.middle(lo, k))
        high = fb.project(g[:, 0], fb.highest(k))
        z_low = fb.project(g[:, 1], fb.lowest(lo))
        x = low + med + spec.amplitude_a * high
        z = z_low + med
        if with_design:
            design = fb.design
    else:
        te = cache.get(loc)
        if spec.truth == "gp_direct":
            z_l = sample_gp(loc, GP_DIRECT_RANGE_FACTOR * spec.kappa, rng)
            z_h = sample_gp(loc, spec.kappa, rng)
        elif spec.name in ("S3a", "S3b"):
            fb = cache.frequency_basis(loc)
            g = sample_gp(loc, spec.kappa, rng)
            m = spec.high_frequency_count
            z_h = fb.project(g, fb.highest(m))
            z_l = fb.project(g, fb.lowest(fb.p - m))
        else:
            g = sample_gp(loc, spec.kappa, rng)
            z_l, z_h = make_frequency_fields(g, loc, spec.num_low_basis, spec.num_high_basis, te)
        z_l, z_h = prep(z_l), prep(z_h)
        zx = spec.xi_x[0] * z_l + spec.xi_x[1] * z_h
        z = spec.xi_z[0] * z_l + spec.xi_z[1] * z_h
        x = zx + spec.sigma_x * rng.standard_normal(n)
        if with_design:
            design = te.design(spec.basis_size)
    mean = spec.beta_true * x + z
    y = mean + spec.sigma * rng.standard_normal(n)
    return Replicate(index, loc, x, y, z, mean, design)


def iter_replicates(spec: ScenarioSpec, with_design: bool = True,
                    indices: Iterable[int] | None = None):
    streams, _ = replicate_streams(spec.seed, spec.replicates)
    fixed = _fixed_locations(spec) if spec.fixed_locations else None
    cache = _LocationCache()
    for i in (range(spec.replicates) if indices is None else indices):
        yield _draw(spec, i, streams[i], cache, fixed, with_design)


def generate_scenario(spec: ScenarioSpec, with_design: bool = False) -> list[Replicate]:
    """All replicates of a scenario; ``z`` and ``E[y]`` are kept as ground truth."""
    if not isinstance(spec, ScenarioSpec):
        raise ValidationError("spec must be a ScenarioSpec")
    return list(iter_replicates(spec, with_design))


# ---------------------------------------------------------------- estimators

@dataclass(frozen=True)
class Estimate:
    beta_hat: float
    conditional_bias: float
    fitted: np.ndarray
    lambda_hat: float


def _conditional(decomp: SpectralDecomposition, rep: Replicate, fit: FitResult, beta: float,
                 coords_x=None, unit_mask=None) -> float:
    """``E[beta_hat | x, z] - beta`` at the fit's smoothing (beta_hat is linear in y)."""
    prob = SpectralProblem(decomp, rep.mean, rep.x if coords_x is None else decomp.eigenbasis @ coords_x,
                           unit_mask=unit_mask, coords_x=coords_x)
    return prob.evaluate(fit.smoothing)["beta"] - beta


def _est_spatial(rep, decomp, spec):
    _, fit = select_lambda_gcv(rep.y, rep.x, decomp)
    return Estimate(fit.beta_hat, _conditional(decomp, rep, fit, spec.beta_true), fit.fitted,
                    fit.lambda_hat)


def _est_spatial_fixed(rep, decomp, spec):
    if spec.fixed_lambda is None:
        raise ValidationError("spatial_fixed needs spec.fixed_lambda")
    params = ModelParams(spec.fixed_lambda, spec.sigma ** 2)
    fit = fit_gls(rep.y, rep.x, decomp, params)
    return Estimate(fit.beta_hat, _conditional(decomp, rep, fit, spec.beta_true), fit.fitted,
                    params.lam)


def _est_nonspatial(rep, decomp, spec):
    fit = fit_nonspatial(rep.y, rep.x)
    return Estimate(fit.beta_hat, bias_nonspatial(rep.x, rep.z), fit.fitted, 0.0)


def _est_spatial_plus(rep, decomp, spec):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fit = spatial_plus(rep.y, rep.x, decomp)
    r = rep.x - fit.details["x_spatial_fit"]
    prob = SpectralProblem(decomp, rep.mean, r)
    cb = prob.evaluate(fit.smoothing)["beta"] - spec.beta_true
    return Estimate(fit.beta_hat, cb, fit.fitted, fit.lambda_hat)


def _capped_estimator(k: int):
    def est(rep, decomp, spec):
        cap = CapSpec.highest(k)
        fit = capped_spatial_plus(rep.y, rep.x, decomp, cap=cap)
        # the capped estimate does not depend on the smoothing
        cfit = capped_spatial_plus(rep.mean, rep.x, decomp, ModelParams(1.0, 1.0), cap)
        return Estimate(fit.beta_hat, cfit.beta_hat - spec.beta_true, fit.fitted, fit.lambda_hat)
    return est


ESTIMATORS: dict[str, Callable] = {
    "spatial": _est_spatial,
    "spatial_fixed": _est_spatial_fixed,
    "nonspatial": _est_nonspatial,
    "spatial_plus": _est_spatial_plus,
}


def resolve_estimator(name: str) -> Callable:
    if name in ESTIMATORS:
        return ESTIMATORS[name]
    if name.startswith("capped:"):
        try:
            k = int(name.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad capped estimator name {name!r}") from None
        if k < 1:
            raise ValidationError("cap must be >= 1")
        return _capped_estimator(k)
    raise ValidationError(f"unknown estimator {name!r}")


# ---------------------------------------------------------------- studies

@dataclass(frozen=True)
class ReplicateRecord:
    replicate: int
    estimator: str
    beta_hat: float
    error: float
    conditional_bias: float
    mse_fitted: float
    lambda_hat: float
    status: str = "ok"

    FIELDS = ("replicate", "estimator", "beta_hat", "error", "conditional_bias", "mse_fitted",
              "lambda_hat", "status")


@dataclass(frozen=True)
class EstimatorSummary:
    estimator: str
    mean_bias: float
    se: float
    variance: float
    mse: float
    mean_conditional_bias: float
    mean_abs_conditional_bias: float
    n_ok: int
    n_failed: int

    FIELDS = ("estimator", "mean_bias", "se", "variance", "mse", "mean_conditional_bias",
              "mean_abs_conditional_bias", "n_ok", "n_failed")


@dataclass
class StudySummary:
    spec: ScenarioSpec
    estimators: dict
    records: list = field(default_factory=list)

    def __getitem__(self, name: str) -> EstimatorSummary:
        return self.estimators[name]


def _summarise(name: str, recs: list[ReplicateRecord]) -> EstimatorSummary:
    ok = [r for r in recs if r.status == "ok"]
    failed = len(recs) - len(ok)
    if not ok:
        nan = float("nan")
        return EstimatorSummary(name, nan, nan, nan, nan, nan, nan, 0, failed)
    err = np.array([r.error for r in ok])
    cb = np.array([r.conditional_bias for r in ok])
    var = float(np.var(err, ddof=1)) if err.size > 1 else 0.0
    return EstimatorSummary(
        estimator=name, mean_bias=float(err.mean()), se=math.sqrt(var / err.size), variance=var,
        mse=float(np.mean([r.mse_fitted for r in ok])), mean_conditional_bias=float(cb.mean()),
        mean_abs_conditional_bias=float(np.mean(np.abs(cb))), n_ok=len(ok), n_failed=failed)


def _run_replicate(rep: Replicate, spec: ScenarioSpec, names: Sequence[str]) -> list[ReplicateRecord]:
    out = []
    try:
        decomp = as_decomposition(rep.design)
    except (SpatConfError, np.linalg.LinAlgError) as err:
        nan = float("nan")
        return [ReplicateRecord(rep.index, nm, nan, nan, nan, nan, nan,
                                f"failed: {type(err).__name__}") for nm in names]
    for name in names:
        try:
            est = resolve_estimator(name)(rep, decomp, spec)
            mse = float(np.mean((est.fitted - rep.mean) ** 2))
            out.append(ReplicateRecord(rep.index, name, est.beta_hat, est.beta_hat - spec.beta_true,
                                       est.conditional_bias, mse, est.lambda_hat))
        except (SpatConfError, np.linalg.LinAlgError) as err:
            nan = float("nan")
            out.append(ReplicateRecord(rep.index, name, nan, nan, nan, nan, nan,
                                       f"failed: {type(err).__name__}"))
    return out


def _run_chunk(spec: ScenarioSpec, names: tuple, indices: list[int]) -> list[ReplicateRecord]:
    out = []
    for rep in iter_replicates(spec, True, indices):
        out.extend(_run_replicate(rep, spec, names))
    return out


def run_study(spec: ScenarioSpec, estimator_set: Sequence[str] = ("spatial", "nonspatial"),
              n_jobs: int = 1) -> StudySummary:
    """Fit every estimator to every replicate and summarise.

    Failing fits are recorded with their status and excluded from the summary.
    Replicate ``i`` always uses RNG stream ``i`` so serial and parallel runs agree.
    """
    names = tuple(estimator_set)
    for nm in names:
        resolve_estimator(nm)
    idx = list(range(spec.replicates))
    if n_jobs > 1 and spec.replicates > 1:
        chunks = [idx[i::n_jobs] for i in range(n_jobs)]
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(_run_chunk, [spec] * len(chunks), [names] * len(chunks), chunks))
        records = sorted((r for p in parts for r in p),
                         key=lambda r: (r.replicate, names.index(r.estimator)))
    else:
        records = _run_chunk(spec, names, idx)
    summary = {nm: _summarise(nm, [r for r in records if r.estimator == nm]) for nm in names}
    return StudySummary(spec, summary, records)


def write_records_csv(summary: StudySummary, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ReplicateRecord.FIELDS)
        for r in summary.records:
            w.writerow([_fmt(getattr(r, f)) for f in ReplicateRecord.FIELDS])


def write_summary_csv(summary: StudySummary, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EstimatorSummary.FIELDS)
        for s in summary.estimators.values():
            w.writerow([_fmt(getattr(s, f)) for f in EstimatorSummary.FIELDS])


def _fmt(v):
    if isinstance(v, float):
        return "%.17g" % v
    return v


# ---------------------------------------------------------------- smoothing sweep

@dataclass
class LambdaSweepStudy:
    """Mean spatial and non-spatial bias over a smoothing grid (expected bias given x and z)."""

    lambda_grid: np.ndarray
    spatial_bias: np.ndarray
    nonspatial_bias: float
    lambda_hats: np.ndarray
    median_lambda: float
    bias_at_median: float
    spec: Optional[ScenarioSpec] = None

    def crossing_pattern(self) -> np.ndarray:
        """Sign of ``spatial - nonspatial`` along the grid."""
        return np.sign(self.spatial_bias - self.nonspatial_bias)


def lambda_sweep_study(spec: ScenarioSpec, lambda_grid: Sequence[float]) -> LambdaSweepStudy:
    """Bias curves against ``lam`` with ``sigma2`` fixed at the true error variance.

    Biases are the expected values given each replicate's ``x`` and ``z``,
    averaged over replicates; ``lam_hat`` is selected by GCV per replicate.
    """
    grid = np.asarray(list(lambda_grid), dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValidationError("lambda grid must be nonempty and positive")
    s2 = spec.sigma ** 2
    curves, ns, coords, lams = [], [], [], []
    for rep in iter_replicates(spec, True):
        decomp = as_decomposition(rep.design)
        prob = SpectralProblem(decomp, rep.y, rep.x)
        rho, _ = prob.select_smoothing()
        lams.append(rho / s2)
        ex, ez = decomp.transform(rep.x), decomp.transform(rep.z)
        curves.append([_bias_at(prob, ex, ez, lam * s2) for lam in grid])
        coords.append((prob, ex, ez))
        ns.append(bias_nonspatial(rep.x, rep.z))
    lams = np.array(lams)
    med = float(np.median(lams))
    at_med = float(np.mean([_bias_at(p, ex, ez, med * s2) for p, ex, ez in coords]))
    return LambdaSweepStudy(grid, np.mean(curves, axis=0), float(np.mean(ns)), lams, med, at_med,
                            spec)


def _bias_at(prob: SpectralProblem, ex, ez, rho: float) -> float:
    d = prob.diag(rho)
    return float(np.sum(d * ex * ez) / np.sum(d * ex * ex))


# ---------------------------------------------------------------- capped grid

@dataclass
class CappedGridStudy:
    """Capped spatial+ over a grid of true caps ``k`` and amplitudes ``a``.

    ``results[(k, a)]`` is a StudySummary whose estimators are ``spatial``,
    ``spatial_plus`` and ``capped:<cap>``.
    """

    ks: tuple
    amplitudes: tuple
    caps: tuple
    results: dict
    spec: Optional[ScenarioSpec] = None


def capped_grid_study(base: ScenarioSpec, ks: Sequence[int], amplitudes: Sequence[float],
                      caps: Sequence[int], estimators: Sequence[str] = ("spatial", "spatial_plus")
                      ) -> CappedGridStudy:
    """All ``(k, a)`` configurations share locations, GP draws and noise per replicate."""
    if base.name != "capped":
        raise ValidationError("capped_grid_study needs a capped scenario spec")
    names = tuple(estimators) + tuple(f"capped:{c}" for c in caps)
    specs = {(k, a): replace(base, cap_truth=int(k), amplitude_a=float(a)) for k in ks for a in amplitudes}
    records = {key: [] for key in specs}
    seeds = np.random.SeedSequence(base.seed).spawn(base.replicates + 1)[: base.replicates]
    fixed = _fixed_locations(base) if base.fixed_locations else None
    cache = _LocationCache()
    for i in range(base.replicates):
        for key, spec in specs.items():
            # identical stream state per configuration: common random numbers
            rng = np.random.default_rng(seeds[i])
            rep = _draw(spec, i, rng, cache, fixed, True)
            records[key].extend(_run_replicate(rep, spec, names))
    results = {key: StudySummary(specs[key], {nm: _summarise(nm, [r for r in recs if r.estimator == nm])
                                              for nm in names}, recs)
               for key, recs in records.items()}
    return CappedGridStudy(tuple(ks), tuple(amplitudes), tuple(caps), results, base)
