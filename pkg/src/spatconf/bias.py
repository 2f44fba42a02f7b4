"""Closed-form bias and variance of the covariate effect estimate."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .exceptions import PreconditionError, UndefinedBiasError, ValidationError
from .spectral import (
    FrequencyCoordinates,
    ModelParams,
    SpatialDesign,
    SpectralDecomposition,
    decompose,
    dense_precision,
    smoothing_weights,
    weighted_inner_product,
)

Model = Union[SpatialDesign, SpectralDecomposition, np.ndarray]


@dataclass(frozen=True)
class BiasReport:
    """Bias ``<x,z>/<x,x>`` in the precision metric and its factorisation.

    ``bias = correlation_term * relative_size_term`` where the first factor is
    the correlation of ``x`` and ``z`` and the second ``||z|| / ||x||``.
    """

    bias: float
    correlation_term: float
    relative_size_term: float
    numerator: float
    denominator: float


class ZeroCase(str, Enum):
    NONSPATIAL_PRESENT = "nonspatial_present"
    FULLY_SPATIAL = "fully_spatial"


@dataclass(frozen=True)
class LambdaLimits:
    limit_at_zero: float
    limit_at_infinity: float
    zero_case: ZeroCase


def _precision_for(model: Model, params: ModelParams | None):
    if isinstance(model, SpectralDecomposition):
        if params is not None and params != model.params:
            return model.with_params(params)
        return model
    if isinstance(model, SpatialDesign):
        if params is None:
            raise ValidationError("params are required when a design is given")
        return dense_precision(model, params)
    return np.asarray(model, dtype=float)


def bias_exact(x, z, model: Model, params: ModelParams | None = None) -> BiasReport:
    """Bias of the GLS estimate of the covariate effect.

    ``model`` may be a design (the precision matrix is then assembled densely
    from the penalised normal equations), a spectral decomposition, or an
    explicit precision matrix.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape or x.ndim != 1:
        raise ValidationError("x and z must be 1-D vectors of equal length")
    if not np.any(x):
        raise UndefinedBiasError("bias is undefined for x = 0")
    M = _precision_for(model, params)
    xx = weighted_inner_product(M, x, x)
    xz = weighted_inner_product(M, x, z)
    zz = weighted_inner_product(M, z, z)
    if xx <= 0:
        raise UndefinedBiasError("x has zero norm in the precision metric (lies in the unpenalised span)")
    if zz <= 0:
        return BiasReport(0.0, 0.0, 0.0, 0.0, xx) if xz == 0 else BiasReport(xz / xx, 0.0, 0.0, xz, xx)
    corr = xz / np.sqrt(xx * zz)
    return BiasReport(bias=xz / xx, correlation_term=float(corr),
                      relative_size_term=float(np.sqrt(zz / xx)), numerator=xz, denominator=xx)


def _check_coords(xi_x: FrequencyCoordinates, xi_z: FrequencyCoordinates, tol: float):
    if xi_x.nonspatial.shape != xi_z.nonspatial.shape or xi_x.spatial.shape != xi_z.spatial.shape:
        raise ValidationError("coordinate blocks of x and z have different sizes")
    zfull = np.abs(xi_z.full)
    scale = float(np.max(zfull)) if zfull.size else 0.0
    if xi_z.nonspatial.size and np.max(np.abs(xi_z.nonspatial)) > tol * max(scale, 1e-300):
        raise PreconditionError("the confounder must be spatial: its non-spatial coordinates are nonzero")


def bias_spectral(xi_x: FrequencyCoordinates, xi_z: FrequencyCoordinates, weights,
                  tol: float = 1e-8) -> float:
    """Bias from frequency coordinates::

        sum_i xs_i zs_i w_i / (sum_j xn_j^2 + sum_i xs_i^2 w_i)
    """
    _check_coords(xi_x, xi_z, tol)
    w = np.asarray(weights, dtype=float)
    if w.shape != xi_x.spatial.shape:
        raise ValidationError("weights must match the spatial block length")
    den = float(np.sum(xi_x.nonspatial ** 2) + np.sum(xi_x.spatial ** 2 * w))
    if den <= 0:
        raise UndefinedBiasError("bias is undefined: zero weighted norm of x")
    return float(np.sum(xi_x.spatial * xi_z.spatial * w) / den)


def bias_nonspatial(x, z) -> float:
    """Bias of the OLS estimate in the non-spatial model with intercept."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape or x.ndim != 1:
        raise ValidationError("x and z must be 1-D vectors of equal length")
    xc = x - x.mean()
    zc = z - z.mean()
    den = float(xc @ xc)
    if den <= 1e-28 * max(1.0, float(x @ x)):
        raise UndefinedBiasError("x is constant; the non-spatial bias is undefined")
    return float(xc @ zc) / den


def lambda_limits(xi_x: FrequencyCoordinates, xi_z: FrequencyCoordinates, penalty_eigenvalues,
                  tol: float = 1e-8) -> LambdaLimits:
    """Limits of the spatial-model bias as ``lam -> 0`` and ``lam -> inf``."""
    _check_coords(xi_x, xi_z, tol)
    a = np.asarray(penalty_eigenvalues, dtype=float)
    xs, zs, xn = xi_x.spatial, xi_z.spatial, xi_x.nonspatial
    if np.any(xn != 0):
        zero, case = 0.0, ZeroCase.NONSPATIAL_PRESENT
    else:
        den0 = float(np.sum(xs ** 2 * a))
        if den0 <= 0:
            raise UndefinedBiasError("zero-smoothing limit undefined: x has no penalised content")
        zero, case = float(np.sum(xs * zs * a)) / den0, ZeroCase.FULLY_SPATIAL
    pen = a != 0
    den_inf = float(np.sum(xn ** 2) + np.sum(xs[pen] ** 2))
    if den_inf <= 0:
        raise UndefinedBiasError("infinite-smoothing limit undefined: x lies in the unpenalised span")
    inf = float(np.sum(xs[pen] * zs[pen])) / den_inf
    return LambdaLimits(limit_at_zero=zero, limit_at_infinity=inf, zero_case=case)


@dataclass(frozen=True)
class SweepPoint:
    lam: float
    spatial_bias: float
    nonspatial_bias: float


def bias_lambda_sweep(x, z, design: SpatialDesign | SpectralDecomposition, sigma2: float,
                      lambda_grid: Sequence[float]) -> list[SweepPoint]:
    """Spatial and non-spatial bias over a grid of smoothing parameters.

    Parts of ``z`` outside the spatial span (possible under a mis-specified
    analysis basis) are kept and enter with weight one.
    """
    grid = np.asarray(list(lambda_grid), dtype=float)
    if grid.size == 0:
        raise ValidationError("lambda grid is empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValidationError("lambda grid must be strictly positive and ascending")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if isinstance(design, SpectralDecomposition):
        decomp = design
    else:
        decomp = decompose(design, ModelParams(float(grid[0]), sigma2))
    ex, ez = decomp.transform(x), decomp.transform(z)
    s = decomp.split
    ns_bias = bias_nonspatial(x, z)
    out = []
    for lam in grid:
        w = smoothing_weights(decomp.penalty_eigenvalues, ModelParams(float(lam), sigma2))
        d = np.concatenate([np.ones(s), w])
        den = float(np.sum(d * ex * ex))
        if den <= 0:
            raise UndefinedBiasError("x lies in the unpenalised span")
        out.append(SweepPoint(float(lam), float(np.sum(d * ex * ez)) / den, ns_bias))
    return out


def estimator_variance(x, model: Model, params: ModelParams | None = None) -> float:
    """``Var(beta_hat) = 1 / <x, x>`` in the precision metric."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or not np.any(x):
        raise UndefinedBiasError("variance is undefined for x = 0")
    M = _precision_for(model, params)
    xx = weighted_inner_product(M, x, x)
    if xx <= 0:
        raise UndefinedBiasError("x lies in the unpenalised span; the variance is infinite")
    return 1.0 / xx
