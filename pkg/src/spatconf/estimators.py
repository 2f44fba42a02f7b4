"""Spatial, non-spatial, spatial+ and capped spatial+ fits.

All spatial fits work in the eigenbasis of the analysis model: once ``U^T y`` and
``U^T x`` are known, every quantity at a given smoothing level (estimate,
residual sum of squares, influence trace) costs O(n).  Penalised least squares
depends on ``lam`` and ``sigma2`` only through their product, here called the
*smoothing* ``rho = lam * sigma2``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Sequence, Union

import numpy as np
from scipy import optimize, stats

from .exceptions import (
    DegenerateCovariateError,
    IdentifiabilityError,
    InsufficientFrequencyError,
    UndefinedBiasError,
    ValidationError,
)
from .spectral import ModelParams, SpatialDesign, SpectralDecomposition, decompose

DesignLike = Union[SpatialDesign, SpectralDecomposition]

GCV_BRACKET = (1e-8, 1e8)
GCV_GRID_SIZE = 25
SIGNIFICANCE_LEVEL = 0.05
DEGENERATE_RTOL = 1e-6


@dataclass
class FitResult:
    """Outcome of one regression fit.

    ``lambda_hat`` is in the units of the analysis model (``smoothing / sigma2_hat``);
    ``smoothing`` is the penalised-least-squares multiplier that was used.
    """

    beta_hat: float
    beta_variance: float
    lambda_hat: float
    sigma2_hat: float
    fitted: np.ndarray
    residuals: np.ndarray
    edf: float
    aic: float
    p_value: float
    rmse: float
    smoothing: float = 0.0
    gcv: float = float("nan")
    rmse_vs_truth: float | None = None
    converged: bool = True
    label: str = ""
    covariate: np.ndarray | None = field(default=None, repr=False)
    details: dict = field(default_factory=dict, repr=False)

    @property
    def std_error(self) -> float:
        return math.sqrt(self.beta_variance)

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE_LEVEL

    def score_truth(self, mean: np.ndarray) -> "FitResult":
        """Attach the RMSE of the fitted values against the true mean of ``y``."""
        self.rmse_vs_truth = float(np.sqrt(np.mean((self.fitted - np.asarray(mean)) ** 2)))
        return self


def wald_p_value(beta: float, variance: float) -> float:
    if not variance > 0 or not np.isfinite(variance):
        return float("nan")
    return float(2.0 * stats.norm.sf(abs(beta) / math.sqrt(variance)))


def gaussian_aic(rss: float, n: int, edf: float, sigma2: float) -> float:
    """``2 (edf + 1) - 2 logLik``; the extra parameter is the error variance."""
    loglik = -0.5 * n * math.log(2 * math.pi * sigma2) - 0.5 * rss / sigma2
    return 2.0 * (edf + 1.0) - 2.0 * loglik


def as_decomposition(design: DesignLike) -> SpectralDecomposition:
    if isinstance(design, SpectralDecomposition):
        return design
    if isinstance(design, SpatialDesign):
        return decompose(design, ModelParams(1.0, 1.0))
    raise ValidationError(f"expected a SpatialDesign or SpectralDecomposition, got {type(design)!r}")


class SpectralProblem:
    """A response and optional covariate expressed in the analysis eigenbasis.

    ``unit_mask`` marks spatial frequencies whose columns are removed from the
    spatial effect; they behave as non-spatial directions (weight one).
    """

    def __init__(self, decomp: SpectralDecomposition, y, x=None, unit_mask=None,
                 coords_y=None, coords_x=None):
        self.decomp = decomp
        self.y = np.asarray(y, dtype=float)
        if self.y.shape != (decomp.n,):
            raise ValidationError(f"y must have length {decomp.n}")
        self.n = decomp.n
        self.ey = decomp.transform(self.y) if coords_y is None else coords_y
        if x is None:
            self.x, self.ex = None, None
        else:
            self.x = np.asarray(x, dtype=float)
            if self.x.shape != (decomp.n,):
                raise ValidationError(f"x must have length {decomp.n}")
            self.ex = decomp.transform(self.x) if coords_x is None else coords_x
        alpha = decomp.penalty_eigenvalues
        self.alpha = alpha
        self.unit = np.zeros(alpha.shape, bool) if unit_mask is None else np.asarray(unit_mask, bool)

    def diag(self, rho: float) -> np.ndarray:
        t = rho * self.alpha
        with np.errstate(over="ignore", invalid="ignore"):
            w = np.where(np.isinf(t), 1.0, t / (1.0 + t))
        w = np.where(self.unit, 1.0, w)
        return np.concatenate([np.ones(self.decomp.split), w])

    def evaluate(self, rho: float) -> dict:
        d = self.diag(rho)
        trace_a = float(np.sum(1.0 - d))
        if self.ex is None:
            beta, sxx = 0.0, float("nan")
            rc = d * self.ey
            edf = trace_a
        else:
            sxx = float(np.sum(d * self.ex ** 2))
            if sxx <= 1e-300:
                raise UndefinedBiasError("covariate lies in the unpenalised spatial span")
            beta = float(np.sum(d * self.ex * self.ey)) / sxx
            rc = d * (self.ey - beta * self.ex)
            edf = trace_a + float(np.sum(d * d * self.ex ** 2)) / sxx
        rss = float(rc @ rc)
        dof = self.n - edf
        gcv = self.n * rss / dof ** 2 if dof > 1e-9 else float("inf")
        return {"rho": rho, "beta": beta, "sxx": sxx, "rc": rc, "rss": rss, "edf": edf, "gcv": gcv}

    def gcv(self, rho: float) -> float:
        return self.evaluate(rho)["gcv"]

    def result(self, rho: float, sigma2: float | None = None, converged: bool = True,
               label: str = "") -> FitResult:
        """Build a FitResult; ``sigma2`` fixes the error variance, otherwise it is estimated."""
        ev = self.evaluate(rho)
        n = self.n
        residuals = self.decomp.eigenbasis @ ev["rc"]
        fitted = self.y - residuals
        dof = max(n - ev["edf"], 1e-9)
        sigma2_hat = max(ev["rss"] / dof, np.finfo(float).tiny)
        s2 = sigma2_hat if sigma2 is None else sigma2
        if self.ex is None:
            var, p = float("nan"), float("nan")
        else:
            var = s2 / ev["sxx"]
            p = wald_p_value(ev["beta"], var)
        return FitResult(
            beta_hat=ev["beta"], beta_variance=var,
            lambda_hat=rho / s2, sigma2_hat=sigma2_hat,
            fitted=fitted, residuals=residuals, edf=ev["edf"],
            aic=gaussian_aic(ev["rss"], n, ev["edf"], sigma2_hat),
            p_value=p, rmse=math.sqrt(ev["rss"] / n), smoothing=rho, gcv=ev["gcv"],
            converged=converged, label=label, covariate=self.x,
        )

    def select_smoothing(self, bracket=GCV_BRACKET, grid_size: int = GCV_GRID_SIZE):
        """Minimise GCV over ``log(rho)``: coarse log grid, then bounded Brent refinement.

        Returns ``(rho_hat, converged)``; on failure the best grid point is returned.
        """
        lo, hi = bracket
        if not (0 < lo < hi):
            raise ValidationError("smoothing bracket must satisfy 0 < lo < hi")
        logs = np.linspace(math.log(lo), math.log(hi), grid_size)
        scores = np.array([self.gcv(math.exp(t)) for t in logs])
        i = int(np.argmin(scores))
        # ties on a flat plateau resolve to the largest smoothing
        best = np.flatnonzero(scores <= scores[i] * (1 + 1e-12))
        i = int(best[-1])
        a, b = logs[max(i - 1, 0)], logs[min(i + 1, grid_size - 1)]
        try:
            res = optimize.minimize_scalar(lambda t: self.gcv(math.exp(t)), bounds=(a, b),
                                           method="bounded", options={"xatol": 1e-6})
            ok = bool(res.success) and np.isfinite(res.fun)
        except (ValueError, FloatingPointError):
            ok = False
        if ok and res.fun <= scores[i]:
            return math.exp(float(res.x)), True
        if not ok:
            warnings.warn("GCV refinement did not converge; using best grid point", RuntimeWarning)
        return math.exp(float(logs[i])), ok


def _check_identifiable(problem: SpectralProblem, rho: float):
    if problem.ex is None:
        return
    d = problem.diag(rho)
    if float(np.sum(d * problem.ex ** 2)) <= 1e-24 * max(float(problem.ex @ problem.ex), 1e-300):
        if rho == 0:
            raise IdentifiabilityError("[x | B_sp] is rank deficient; lambda = 0 is not allowed")
        raise UndefinedBiasError("covariate lies in the unpenalised spatial span")


def fit_gls(y, x, design: DesignLike, params: ModelParams) -> FitResult:
    """Fit the spatial model at fixed ``(lam, sigma2)``.

    ``beta_hat = <x, y> / <x, x>`` in the precision metric; the variance is
    ``sigma2 / <x, x>`` with the supplied ``sigma2``.
    """
    x = np.asarray(x, dtype=float)
    if not np.any(x):
        raise UndefinedBiasError("x = 0")
    problem = SpectralProblem(as_decomposition(design), y, x)
    _check_identifiable(problem, params.smoothing)
    fit = problem.result(params.smoothing, sigma2=params.sigma2, label="spatial")
    fit.lambda_hat = params.lam
    return fit


def gls_estimates(decomp: SpectralDecomposition, x, Y) -> np.ndarray:
    """Vectorised ``beta_hat`` for a stack of responses ``Y`` (n x m) at the decomposition's params."""
    d = decomp.diagonal()
    ex = decomp.transform(np.asarray(x, dtype=float))
    eY = decomp.transform(np.asarray(Y, dtype=float))
    sxx = float(np.sum(d * ex * ex))
    if sxx <= 0:
        raise UndefinedBiasError("x has zero weighted norm")
    return (d * ex) @ eY / sxx


def select_lambda_gcv(y, x, design: DesignLike, bracket=GCV_BRACKET,
                      grid_size: int = GCV_GRID_SIZE) -> tuple[float, FitResult]:
    """Choose the smoothing by generalised cross-validation.

    ``GCV(rho) = n RSS / (n - tr H)^2`` with ``H`` the influence matrix of the
    joint fit of the covariate and the spatial effect.  The bracket is on the
    smoothing ``rho``.  Returns ``(lambda_hat, fit)``.
    """
    problem = SpectralProblem(as_decomposition(design), y, x)
    rho, ok = problem.select_smoothing(bracket, grid_size)
    fit = problem.result(rho, converged=ok, label="spatial")
    return fit.lambda_hat, fit


def fit_spatial(y, x, design: DesignLike, params: ModelParams | None = None) -> FitResult:
    """Spatial model fit: GCV-selected smoothing unless ``params`` is given."""
    if params is None:
        return select_lambda_gcv(y, x, design)[1]
    return fit_gls(y, x, design, params)


def fit_nonspatial(y, x) -> FitResult:
    """OLS with intercept."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape or y.ndim != 1:
        raise ValidationError("x and y must be 1-D vectors of equal length")
    n = y.size
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-28 * max(1.0, float(x @ x)):
        raise UndefinedBiasError("x is constant")
    beta = float(xc @ (y - y.mean())) / sxx
    fitted = y.mean() + beta * xc
    residuals = y - fitted
    rss = float(residuals @ residuals)
    edf = 2.0
    sigma2 = max(rss / (n - edf), np.finfo(float).tiny)
    var = sigma2 / sxx
    return FitResult(beta_hat=beta, beta_variance=var, lambda_hat=0.0, sigma2_hat=sigma2,
                     fitted=fitted, residuals=residuals, edf=edf,
                     aic=gaussian_aic(rss, n, edf, sigma2), p_value=wald_p_value(beta, var),
                     rmse=math.sqrt(rss / n), label="non-spatial", covariate=x)


def _resolve_params(params) -> ModelParams | None:
    if params is None or isinstance(params, ModelParams):
        return params
    raise ValidationError("params must be a ModelParams or None")


def spatial_plus(y, x, design: DesignLike, smoothing_policy: Union[str, float] = "gcv",
                 params: ModelParams | None = None, nonspatial_rtol: float = 1e-8) -> FitResult:
    """Two-step spatial+ estimate.

    Step one fits the spatial model without covariates to ``x`` and keeps the
    residuals ``r``; step two fits the spatial model to ``y`` with ``r`` in place
    of ``x``.  ``smoothing_policy`` controls step one: ``"gcv"``, ``"none"`` (exact
    projection off the spatial span) or a fixed smoothing value.  Step two uses
    ``params`` when given, GCV otherwise.
    """
    decomp = as_decomposition(design)
    x = np.asarray(x, dtype=float)
    first = SpectralProblem(decomp, x)
    ex = first.ey
    if np.linalg.norm(ex[: decomp.split]) <= nonspatial_rtol * max(np.linalg.norm(x), 1e-300):
        warnings.warn("x has no non-spatial component; spatial+ may not remove bias", RuntimeWarning)
    if smoothing_policy == "gcv":
        rho_x, _ = first.select_smoothing()
    elif smoothing_policy == "none":
        rho_x = 0.0
    else:
        rho_x = float(smoothing_policy)
        if rho_x < 0:
            raise ValidationError("first-stage smoothing must be nonnegative")
    rc = first.diag(rho_x) * ex
    if np.linalg.norm(rc) <= DEGENERATE_RTOL * max(np.linalg.norm(ex), 1e-300):
        raise DegenerateCovariateError("spatial+ residuals of x are numerically zero")
    r = decomp.eigenbasis @ rc
    problem = SpectralProblem(decomp, y, r, coords_x=rc)
    if params is None:
        rho, ok = problem.select_smoothing()
        fit = problem.result(rho, converged=ok, label="spatial+")
    else:
        _check_identifiable(problem, params.smoothing)
        fit = problem.result(params.smoothing, sigma2=params.sigma2, label="spatial+")
        fit.lambda_hat = params.lam
    fit.details["first_stage_smoothing"] = rho_x
    fit.details["x_spatial_fit"] = x - r
    return fit


class CapMode(str, Enum):
    HIGHEST = "highest_k"
    LOWEST = "lowest_k"
    WINDOW = "window"


@dataclass(frozen=True)
class CapSpec:
    """Which spatial frequencies of ``x`` are used (and removed from the spatial effect).

    ``window`` selects ``k`` consecutive frequencies counted down from the highest:
    ``start = 1`` is the same as ``highest_k``.
    """

    mode: CapMode
    k: int
    start: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", CapMode(self.mode))
        if int(self.k) != self.k or self.k < 1:
            raise ValidationError(f"cap k must be a positive integer, got {self.k}")
        if int(self.start) != self.start or self.start < 1:
            raise ValidationError(f"window start must be a positive integer, got {self.start}")

    @classmethod
    def highest(cls, k: int) -> "CapSpec":
        return cls(CapMode.HIGHEST, k)

    @classmethod
    def lowest(cls, k: int) -> "CapSpec":
        return cls(CapMode.LOWEST, k)

    @classmethod
    def window(cls, start: int, k: int) -> "CapSpec":
        return cls(CapMode.WINDOW, k, start)

    def indices(self, p: int) -> np.ndarray:
        """Positions within the ascending spatial block."""
        if self.k > p:
            raise ValidationError(f"cap {self.k} exceeds the spatial dimension {p}")
        if self.mode is CapMode.HIGHEST:
            return np.arange(p - self.k, p)
        if self.mode is CapMode.LOWEST:
            return np.arange(self.k)
        if self.start + self.k - 1 > p:
            raise ValidationError(f"window start {self.start} + k {self.k} - 1 exceeds {p}")
        top = p - self.start + 1
        return np.arange(top - self.k, top)

    def describe(self) -> str:
        if self.mode is CapMode.HIGHEST:
            return f"cap = {self.k}"
        if self.mode is CapMode.LOWEST:
            return f"low cap = {self.k}"
        return f"window start = {self.start}"


def capped_spatial_plus(y, x, design: DesignLike, params: ModelParams | None = None,
                        cap: CapSpec | None = None, *, _coords=None) -> FitResult:
    """Capped spatial+ estimate.

    The covariate is split exactly (no smoothing) in the spatial eigenbasis;
    ``r`` is its cap-selected part.  The corresponding spatial frequencies are
    removed from the spatial effect and ``y`` is regressed on ``r``.  Smoothing
    of the remaining spatial effect is GCV-selected unless ``params`` is given.
    """
    if cap is None:
        raise ValidationError("a CapSpec is required")
    params = _resolve_params(params)
    decomp = as_decomposition(design)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if _coords is None:
        ex, ey = decomp.transform(x), decomp.transform(y)
    else:
        ex, ey = _coords
    sel = cap.indices(decomp.p)
    rc = np.zeros_like(ex)
    pos = decomp.split + sel
    rc[pos] = ex[pos]
    if np.linalg.norm(rc) < DEGENERATE_RTOL * max(np.linalg.norm(ex), 1e-300):
        raise InsufficientFrequencyError(
            f"{cap.describe()}: selected frequencies of x are numerically zero")
    mask = np.zeros(decomp.p, bool)
    mask[sel] = True
    r = decomp.spatial_basis[:, sel] @ ex[pos]
    problem = SpectralProblem(decomp, y, r, unit_mask=mask, coords_y=ey, coords_x=rc)
    if params is None:
        rho, ok = problem.select_smoothing()
        fit = problem.result(rho, converged=ok, label=cap.describe())
    else:
        fit = problem.result(params.smoothing, sigma2=params.sigma2, label=cap.describe())
        fit.lambda_hat = params.lam
    fit.details["cap"] = cap
    return fit


@dataclass
class CapSweepResult:
    caps: list
    fits: list
    errors: list
    significant: list
    stability: float

    @property
    def significant_estimates(self) -> list[float]:
        return [f.beta_hat for f, s in zip(self.fits, self.significant) if s]


def cap_sweep(y, x, design: DesignLike, params: ModelParams | None,
              caps: Sequence[CapSpec], level: float = SIGNIFICANCE_LEVEL) -> CapSweepResult:
    """Capped spatial+ over several caps; per-cap errors are collected, not raised.

    ``stability`` is the largest pairwise difference between significant estimates
    (``nan`` when fewer than two caps are significant).
    """
    caps = list(caps)
    if not caps:
        raise ValidationError("cap list is empty")
    decomp = as_decomposition(design)
    coords = (decomp.transform(np.asarray(x, float)), decomp.transform(np.asarray(y, float)))
    fits, errors, sig = [], [], []
    for cap in caps:
        try:
            fit = capped_spatial_plus(y, x, decomp, params, cap, _coords=coords)
        except (ValidationError, UndefinedBiasError) as err:
            fits.append(None)
            errors.append(f"{err.code}: {err}")
            sig.append(False)
            continue
        fits.append(fit)
        errors.append(None)
        sig.append(bool(fit.p_value < level))
    betas = [f.beta_hat for f, s in zip(fits, sig) if s]
    spread = max((abs(a - b) for a, b in combinations(betas, 2)), default=float("nan"))
    return CapSweepResult(caps, fits, errors, sig, spread)
