"""Model structure and precision-matrix eigenstructure of the spatial analysis model.

The spatial analysis model is

    y = beta * x + B_sp beta_sp + eps,   beta_sp ~ N(0, S^- / lam),   eps ~ N(0, sigma2 I)

with marginal covariance ``Sigma = sigma2 I + B_sp S^- B_sp^T / lam``.  Unpenalised
directions of ``S`` carry an improper (flat) prior, so in those directions the
precision is zero.

The eigenbasis ``U`` of the precision matrix splits ``R^n`` into ``n - p``
non-spatial directions (eigenvalue ``1/sigma2``) followed by ``p`` spatial
directions ordered by increasing penalty, with eigenvalues ``w_i / sigma2`` and

    w_i = lam * alpha_i / (1/sigma2 + lam * alpha_i).

The penalty eigenvalues ``alpha_i`` are those of the penalty written in an
orthonormal basis of the column space of ``B_sp``; they coincide with the
eigenvalues of ``S`` whenever ``B_sp`` has orthonormal columns.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import linalg

from .exceptions import NumericalError, ValidationError

SYMMETRY_RTOL = 1e-12
ORTHONORMALITY_ATOL = 1e-10
SPECTRAL_IDENTITY_ATOL = 1e-8


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelParams:
    """Smoothing parameter ``lam`` and error variance ``sigma2`` of the analysis model."""

    lam: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValidationError(f"lambda must be finite and >= 0, got {self.lam}")
        if not np.isfinite(self.sigma2) or self.sigma2 <= 0:
            raise ValidationError(f"sigma2 must be finite and > 0, got {self.sigma2}")

    @property
    def smoothing(self) -> float:
        """The product ``lam * sigma2``; penalised least squares only depends on this."""
        return self.lam * self.sigma2

    @classmethod
    def from_smoothing(cls, rho: float, sigma2: float = 1.0) -> "ModelParams":
        return cls(lam=rho / sigma2, sigma2=sigma2)


@dataclass(frozen=True, eq=False)
class SpatialDesign:
    """Basis matrix ``B_sp`` (n x p), penalty ``S`` (p x p) and the observation locations.

    The penalty is validated as symmetric and positive semi-definite; negative
    eigenvalues within ``penalty_rank_tolerance * max|eig|`` are clamped to zero.
    """

    locations: np.ndarray
    basis: np.ndarray
    penalty: np.ndarray
    penalty_rank_tolerance: float = 1e-10

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        if loc.ndim == 1:
            loc = loc[:, None]
        B = np.asarray(self.basis, dtype=float)
        S = np.asarray(self.penalty, dtype=float)
        if B.ndim != 2 or S.ndim != 2:
            raise ValidationError("basis and penalty must be 2-D arrays")
        n, p = B.shape
        if loc.shape[0] != n:
            raise ValidationError(f"basis has {n} rows but there are {loc.shape[0]} locations")
        if p > n:
            raise ValidationError(f"basis has more columns ({p}) than rows ({n})")
        if S.shape != (p, p):
            raise ValidationError(f"penalty must be {p}x{p}, got {S.shape}")
        if not (np.all(np.isfinite(B)) and np.all(np.isfinite(S)) and np.all(np.isfinite(loc))):
            raise ValidationError("design contains non-finite values")
        if self.penalty_rank_tolerance < 0:
            raise ValidationError("penalty_rank_tolerance must be nonnegative")
        scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
        if S.size and np.max(np.abs(S - S.T)) > SYMMETRY_RTOL * scale:
            raise ValidationError("penalty matrix is not symmetric")
        S = 0.5 * (S + S.T)
        if p:
            alpha, V = np.linalg.eigh(S)
            top = max(float(np.max(np.abs(alpha))), 0.0)
            tol = self.penalty_rank_tolerance * top
            if alpha[0] < -tol:
                raise ValidationError(
                    f"penalty is not positive semi-definite (min eigenvalue {alpha[0]:.3e})")
            if alpha[0] < 0:
                S = (V * np.clip(alpha, 0.0, None)) @ V.T
                S = 0.5 * (S + S.T)
        object.__setattr__(self, "locations", _frozen(loc))
        object.__setattr__(self, "basis", _frozen(B))
        object.__setattr__(self, "penalty", _frozen(S))

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def p(self) -> int:
        return self.basis.shape[1]

    def with_intercept(self, tol: float = 1e-8) -> "SpatialDesign":
        """Append the constant vector as an unpenalised column unless already spanned."""
        one = np.ones(self.n)
        if self.p:
            coef, *_ = np.linalg.lstsq(self.basis, one, rcond=None)
            if np.linalg.norm(one - self.basis @ coef) <= tol * np.sqrt(self.n):
                return self
        if self.p + 1 > self.n:
            raise ValidationError("cannot append an intercept column: basis already has n columns")
        B = np.column_stack([self.basis, one])
        S = np.zeros((self.p + 1, self.p + 1))
        S[: self.p, : self.p] = self.penalty
        return SpatialDesign(self.locations, B, S, self.penalty_rank_tolerance)


@dataclass(frozen=True)
class FrequencyCoordinates:
    """Coefficients of a vector in the eigenbasis: non-spatial block then spatial block."""

    nonspatial: np.ndarray
    spatial: np.ndarray

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.nonspatial, self.spatial])

    @classmethod
    def from_full(cls, xi: np.ndarray, split: int) -> "FrequencyCoordinates":
        xi = np.asarray(xi, dtype=float)
        return cls(xi[:split].copy(), xi[split:].copy())


def smoothing_weights(penalty_eigenvalues: np.ndarray, params: ModelParams) -> np.ndarray:
    """``w_i = lam alpha_i / (1/sigma2 + lam alpha_i)``, evaluated stably."""
    a = np.asarray(penalty_eigenvalues, dtype=float)
    t = params.smoothing * a
    with np.errstate(over="ignore", invalid="ignore"):
        w = np.where(np.isinf(t), 1.0, t / (1.0 + t))
    return np.clip(w, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Orthonormal eigenbasis of the precision matrix and the smoothing weights.

    Attributes
    ----------
    eigenbasis : (n, n) array
        Columns ``[U_ns | U_sp]``; spatial columns sorted by ascending penalty.
    penalty_eigenvalues : (p_eff,) array
        Ascending, nonnegative.
    weights : (p_eff,) array
        Smoothing weights for ``params``.
    split : int
        Number of non-spatial directions, ``n - p_eff``.
    params : ModelParams
    """

    eigenbasis: np.ndarray
    penalty_eigenvalues: np.ndarray
    weights: np.ndarray
    split: int
    params: ModelParams

    @property
    def n(self) -> int:
        return self.eigenbasis.shape[0]

    @property
    def p(self) -> int:
        return self.n - self.split

    @property
    def nonspatial_basis(self) -> np.ndarray:
        return self.eigenbasis[:, : self.split]

    @property
    def spatial_basis(self) -> np.ndarray:
        return self.eigenbasis[:, self.split:]

    def diagonal(self) -> np.ndarray:
        """``(1, ..., 1, w_1, ..., w_p)``; the precision is this times ``1/sigma2``."""
        return np.concatenate([np.ones(self.split), self.weights])

    def with_params(self, params: ModelParams) -> "SpectralDecomposition":
        """Same eigenbasis, weights recomputed; the eigenvectors do not depend on params."""
        return SpectralDecomposition(self.eigenbasis, self.penalty_eigenvalues,
                                     _frozen(smoothing_weights(self.penalty_eigenvalues, params)),
                                     self.split, params)

    def precision_matrix(self) -> np.ndarray:
        U = self.eigenbasis
        return (U * (self.diagonal() / self.params.sigma2)) @ U.T

    def transform(self, v: np.ndarray) -> np.ndarray:
        """``U^T v`` for a vector or an (n, m) stack of vectors."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValidationError(f"expected leading dimension {self.n}, got {v.shape[0]}")
        return self.eigenbasis.T @ v


def effective_penalty(design: SpatialDesign, rank_rtol: float | None = None):
    """Orthonormal basis of ``col(B_sp)``, its complement and the induced penalty.

    Returns ``(Q_sp, Q_ns, S_eff)`` where ``B_sp b = Q_sp c`` and ``S_eff`` is the
    smallest penalty ``b^T S b`` over all ``b`` mapping to ``c``.  When ``B_sp`` has
    full column rank this is ``R^-T S R^-1`` for ``B_sp = Q R``.
    """
    B, S = design.basis, design.penalty
    n, p = B.shape
    try:
        U, s, Wt = np.linalg.svd(B, full_matrices=True)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but robust
        U, s, Wt = linalg.svd(B, full_matrices=True, lapack_driver="gesvd")
    if rank_rtol is None:
        rank_rtol = max(n, p) * np.finfo(float).eps
    r = int(np.sum(s > rank_rtol * (s[0] if s.size else 0.0))) if p else 0
    Q_sp, Q_ns = U[:, :r], U[:, r:]
    Gp = Wt[:r].T / s[:r]
    if r < p:
        W = Wt[r:].T
        SW = S @ W
        inner = np.linalg.pinv(W.T @ SW, hermitian=True)
        S_red = S - SW @ inner @ SW.T
    else:
        S_red = S
    S_eff = Gp.T @ S_red @ Gp
    return Q_sp, Q_ns, 0.5 * (S_eff + S_eff.T)


def decompose(design: SpatialDesign, params: ModelParams) -> SpectralDecomposition:
    """Eigenstructure of the precision matrix of the analysis model.

    The spatial eigenvectors span the column space of ``B_sp``; the non-spatial
    ones span its orthogonal complement.  A rank-deficient basis is reduced to
    its effective rank.
    """
    try:
        Q_sp, Q_ns, S_eff = effective_penalty(design)
        if S_eff.size:
            alpha, V = linalg.eigh(S_eff)
        else:
            alpha, V = np.zeros(0), np.zeros((0, 0))
    except (np.linalg.LinAlgError, linalg.LinAlgError) as err:
        cond = np.linalg.cond(design.basis) if design.p else float("nan")
        raise NumericalError(f"eigen-solver failed (cond(B_sp)={cond:.3e}): {err}") from err
    if alpha.size:
        tol = design.penalty_rank_tolerance * max(float(np.max(np.abs(alpha))), 0.0)
        if alpha[0] < -max(tol, 1e-12 * max(1.0, float(np.max(np.abs(alpha))))):
            raise NumericalError(f"effective penalty has negative eigenvalue {alpha[0]:.3e}")
        alpha = np.where(alpha <= tol, 0.0, alpha)
    U = np.hstack([Q_ns, Q_sp @ V])
    return SpectralDecomposition(
        eigenbasis=_frozen(U),
        penalty_eigenvalues=_frozen(alpha),
        weights=_frozen(smoothing_weights(alpha, params)),
        split=Q_ns.shape[1],
        params=params,
    )


def coordinates(decomp: SpectralDecomposition, v: np.ndarray) -> FrequencyCoordinates:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != decomp.n:
        raise ValidationError(f"vector must have length {decomp.n}, got shape {v.shape}")
    return FrequencyCoordinates.from_full(decomp.eigenbasis.T @ v, decomp.split)


def weighted_inner_product(model: Union[SpectralDecomposition, np.ndarray],
                           a: np.ndarray, b: np.ndarray) -> float:
    """``a^T Sigma^-1 b`` from a decomposition (spectrally) or from a dense precision matrix."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"vectors must be 1-D of equal length, got {a.shape} and {b.shape}")
    if isinstance(model, SpectralDecomposition):
        if a.shape[0] != model.n:
            raise ValidationError(f"vectors must have length {model.n}")
        xa, xb = model.eigenbasis.T @ a, model.eigenbasis.T @ b
        return float(np.sum(model.diagonal() * xa * xb) / model.params.sigma2)
    M = np.asarray(model, dtype=float)
    if M.shape != (a.shape[0], a.shape[0]):
        raise ValidationError("precision matrix shape does not match vector length")
    return float(a @ M @ b)


def dense_precision(design: SpatialDesign, params: ModelParams) -> np.ndarray:
    """Precision matrix assembled without any eigendecomposition.

    ``sigma^-2 (I - B (B^T B + lam sigma2 S)^+ B^T)``; equals ``inv(Sigma)`` when
    ``S`` is nonsingular and ``lam > 0``, and is the flat-prior limit otherwise.
    """
    B, S = design.basis, design.penalty
    A = B.T @ B + params.smoothing * S
    try:
        K = linalg.solve(A, B.T, assume_a="sym")
    except (linalg.LinAlgError, ValueError):
        K = np.linalg.pinv(A, hermitian=True) @ B.T
    M = (np.eye(design.n) - B @ K) / params.sigma2
    return 0.5 * (M + M.T)
