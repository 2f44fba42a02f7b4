"""Concrete spatial designs: thin plate, exponential Gaussian process, graph Laplacian.

Thin plate regression splines follow the eigen-truncation construction: the
radial kernel matrix ``E_ij = eta(|s_i - s_j|)`` over a set of knots is
eigendecomposed, the ``k`` largest-magnitude eigenpairs are kept, and the
linear polynomial null space is added unpenalised.  With ``k = n`` and knots at
the data, the exact full-rank thin plate smoother is used instead, written in
its stable orthogonal form.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .exceptions import NumericalError, ValidationError
from .spectral import SpatialDesign, effective_penalty

GP_NUGGET = 1e-10
DUPLICATE_JITTER = 1e-9


def tps_kernel(r: np.ndarray) -> np.ndarray:
    """Thin plate radial function in two dimensions (m = 2): ``r^2 log(r) / (8 pi)``."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] ** 2 * np.log(r[pos]) / (8.0 * math.pi)
    return out


def _as_points(locations) -> np.ndarray:
    loc = np.asarray(locations, dtype=float)
    if loc.ndim == 1:
        loc = loc[:, None]
    if loc.ndim != 2 or loc.shape[0] == 0:
        raise ValidationError("locations must be a nonempty (n, d) array")
    if not np.all(np.isfinite(loc)):
        raise ValidationError("locations contain non-finite values")
    return loc


def dejitter(locations, seed: int = 0) -> np.ndarray:
    """Separate coincident points by ``1e-9`` times the domain scale."""
    loc = _as_points(locations).copy()
    scale = float(np.max(np.ptp(loc, axis=0))) or 1.0
    tree = cKDTree(loc)
    pairs = tree.query_pairs(r=1e-12 * scale)
    if pairs:
        rng = np.random.default_rng(seed)
        dup = sorted({j for _, j in pairs})
        warnings.warn(f"{len(dup)} duplicate locations jittered", RuntimeWarning)
        loc[dup] += DUPLICATE_JITTER * scale * rng.standard_normal((len(dup), loc.shape[1]))
    return loc


def farthest_point_subsample(locations, m: int, seed: int = 0) -> np.ndarray:
    """Indices of ``m`` points chosen greedily to be far apart, from a seeded start."""
    loc = _as_points(locations)
    n = loc.shape[0]
    if m >= n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    idx = [int(rng.integers(n))]
    dist = np.linalg.norm(loc - loc[idx[0]], axis=1)
    for _ in range(m - 1):
        j = int(np.argmax(dist))
        idx.append(j)
        dist = np.minimum(dist, np.linalg.norm(loc - loc[j], axis=1))
    return np.sort(np.array(idx))


def _polynomial(loc: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(loc.shape[0]), loc])


class ThinPlateEigen:
    """Eigendecomposed thin plate kernel for a fixed set of 2-D locations.

    Designs of several ranks (``design(k)``) share one eigendecomposition, so the
    generating and analysis bases of a simulation replicate are nested.
    """

    def __init__(self, locations, max_knots: int = 2000, seed: int = 0):
        loc = dejitter(locations, seed)
        if loc.shape[1] != 2:
            raise ValidationError("thin plate bases are implemented for 2-D locations")
        self.locations = loc
        self.n = loc.shape[0]
        self.knot_index = farthest_point_subsample(loc, max_knots, seed)
        self.knots = loc[self.knot_index]
        self.knots_are_data = self.knot_index.size == self.n
        self.T = _polynomial(loc)
        self.T_knots = _polynomial(self.knots)
        if np.linalg.matrix_rank(self.T_knots, tol=1e-10 * max(1.0, np.max(np.abs(self.T_knots)))) < 3:
            raise ValidationError("locations are collinear; the linear null space is not identifiable")
        E = tps_kernel(cdist(self.knots, self.knots))
        ev, U = linalg.eigh(E)
        order = np.argsort(-np.abs(ev), kind="stable")
        self.kernel_eigenvalues = ev[order]
        self.kernel_eigenvectors = U[:, order]
        self._E = E

    @property
    def max_basis(self) -> int:
        return self.knot_index.size

    def design(self, num_basis: int) -> SpatialDesign:
        k = int(num_basis)
        if k < 3:
            raise ValidationError("num_basis must be at least 3 (the linear null space)")
        if k > self.n:
            raise ValidationError(f"num_basis {k} exceeds the number of locations {self.n}")
        if k > self.max_basis:
            raise ValidationError(f"num_basis {k} exceeds the number of knots {self.max_basis}")
        if k == 3:
            return SpatialDesign(self.locations, self.T, np.zeros((3, 3)))
        if k == self.n and self.knots_are_data:
            return self._full_design()
        D = self.kernel_eigenvalues[:k]
        Uk = self.kernel_eigenvectors[:, :k]
        # c = D delta: basis U_k c (knots at data), penalty c^T D^-1 c,
        # constraint T^T U_k D^-1 c = 0
        C = (self.T_knots.T @ Uk) / D
        Q, _ = np.linalg.qr(C.T, mode="complete")
        Z = Q[:, 3:]
        if self.knots_are_data:
            radial = Uk @ Z
        else:
            E_nk = tps_kernel(cdist(self.locations, self.knots))
            radial = E_nk @ ((Uk / D) @ Z)
        pen = (Z.T / D) @ Z
        S = np.zeros((k, k))
        S[: k - 3, : k - 3] = 0.5 * (pen + pen.T)
        return SpatialDesign(self.locations, np.column_stack([radial, self.T]), S)

    def _full_design(self) -> SpatialDesign:
        # exact thin plate smoother: I - A = rho Q2 (Q2^T E Q2 + rho I)^-1 Q2^T
        Q, _ = np.linalg.qr(self.T, mode="complete")
        Q1, Q2 = Q[:, :3], Q[:, 3:]
        G = Q2.T @ self._E @ Q2
        gam, V = linalg.eigh(0.5 * (G + G.T))
        if gam[0] <= 0:
            raise NumericalError(f"thin plate kernel not conditionally positive definite ({gam[0]:.3e})")
        k = self.n
        S = np.zeros((k, k))
        S[np.arange(k - 3), np.arange(k - 3)] = 1.0 / gam
        return SpatialDesign(self.locations, np.column_stack([Q2 @ V, Q1]), S)


def build_thin_plate(locations, num_basis: int, max_knots: int = 2000, seed: int = 0) -> SpatialDesign:
    """Reduced-rank thin plate spline design with ``num_basis`` columns (3 unpenalised)."""
    return ThinPlateEigen(locations, max_knots=max_knots, seed=seed).design(num_basis)


def exponential_covariance(locations, kappa: float) -> np.ndarray:
    if not kappa > 0:
        raise ValidationError(f"kappa must be positive, got {kappa}")
    loc = _as_points(locations)
    return np.exp(-cdist(loc, loc) / kappa)


def build_gp_exponential(locations, kappa: float, nugget: float = GP_NUGGET) -> SpatialDesign:
    """Incidence basis ``B_sp = I`` with penalty ``S = C^-1``, ``C_ij = exp(-|s_i - s_j| / kappa)``."""
    loc = dejitter(locations)
    C = exponential_covariance(loc, kappa)
    C[np.diag_indices_from(C)] += nugget * float(np.mean(np.diag(C)))
    try:
        cf = linalg.cho_factor(C, lower=True)
    except linalg.LinAlgError as err:
        raise NumericalError(f"covariance matrix is singular beyond nugget rescue: {err}") from err
    S = linalg.cho_solve(cf, np.eye(C.shape[0]))
    return SpatialDesign(loc, np.eye(C.shape[0]), 0.5 * (S + S.T))


def build_graph_laplacian(adjacency, locations=None) -> SpatialDesign:
    """Region-indicator basis with the graph Laplacian ``D - A`` as penalty."""
    A = np.asarray(adjacency, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError("adjacency must be a square matrix")
    if not np.array_equal(A, A.T):
        raise ValidationError("adjacency matrix is not symmetric")
    if np.any(np.diag(A) != 0):
        raise ValidationError("adjacency must have a zero diagonal")
    if not np.all((A == 0) | (A == 1)):
        raise ValidationError("adjacency entries must be 0 or 1")
    n = A.shape[0]
    L = np.diag(A.sum(axis=1)) - A
    loc = np.arange(n, dtype=float)[:, None] if locations is None else locations
    return SpatialDesign(loc, np.eye(n), L)


def connected_components(adjacency) -> int:
    from scipy.sparse.csgraph import connected_components as cc

    return int(cc(np.asarray(adjacency) != 0, directed=False)[0])


@dataclass(frozen=True)
class ThinPlateRadial:
    num_basis: int

    def __post_init__(self):
        if self.num_basis < 3:
            raise ValidationError("num_basis must be >= 3")


@dataclass(frozen=True)
class GPExponential:
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValidationError("kappa must be > 0")


@dataclass(frozen=True, eq=False)
class GraphLaplacian:
    adjacency: np.ndarray


BasisKind = Union[ThinPlateRadial, GPExponential, GraphLaplacian]


def build_design(kind: BasisKind, locations=None) -> SpatialDesign:
    if isinstance(kind, ThinPlateRadial):
        return build_thin_plate(locations, kind.num_basis)
    if isinstance(kind, GPExponential):
        return build_gp_exponential(locations, kind.kappa)
    if isinstance(kind, GraphLaplacian):
        return build_graph_laplacian(kind.adjacency, locations)
    raise ValidationError(f"unknown basis kind {kind!r}")


@dataclass(frozen=True, eq=False)
class FrequencyBasis:
    """A design rewritten with orthonormal columns and a diagonal, ascending penalty.

    ``frequency_order[j]`` is the penalty rank of column ``j`` (columns are stored
    sorted, so this is the identity); ``alignment[j]`` is the original column most
    aligned with new column ``j``.
    """

    design: SpatialDesign
    frequency_order: np.ndarray
    alignment: np.ndarray

    @property
    def penalty_eigenvalues(self) -> np.ndarray:
        return np.diag(self.design.penalty)

    @property
    def p(self) -> int:
        return self.design.p

    def lowest(self, k: int) -> np.ndarray:
        return np.arange(min(k, self.p))

    def highest(self, k: int) -> np.ndarray:
        return np.arange(self.p - min(k, self.p), self.p)

    def middle(self, low: int, high: int) -> np.ndarray:
        """Columns strictly between the ``low`` lowest and the ``high`` highest."""
        return np.arange(low, self.p - high)

    def project(self, v, columns) -> np.ndarray:
        """Orthogonal projection of ``v`` onto the selected frequency columns."""
        Bc = self.design.basis[:, np.asarray(columns, dtype=int)]
        return Bc @ (Bc.T @ np.asarray(v, dtype=float))

    def subdesign(self, columns) -> SpatialDesign:
        c = np.asarray(columns, dtype=int)
        return SpatialDesign(self.design.locations, self.design.basis[:, c],
                             self.design.penalty[np.ix_(c, c)])


def reparameterize(design: SpatialDesign) -> FrequencyBasis:
    """Diagonalise the penalty over an orthonormal basis of ``col(B_sp)``, ascending."""
    try:
        Q_sp, _, S_eff = effective_penalty(design)
        alpha, V = linalg.eigh(S_eff)
    except (np.linalg.LinAlgError, linalg.LinAlgError) as err:
        raise NumericalError(f"eigen-solver failed: {err}") from err
    tol = design.penalty_rank_tolerance * max(float(np.max(np.abs(alpha))), 0.0) if alpha.size else 0.0
    alpha = np.where(alpha <= tol, 0.0, alpha)
    Bt = Q_sp @ V
    order = np.argsort(alpha, kind="stable")
    Bt, alpha = Bt[:, order], alpha[order]
    norms = np.linalg.norm(design.basis, axis=0)
    norms[norms == 0] = 1.0
    align = np.argmax(np.abs(Bt.T @ (design.basis / norms)), axis=1)
    rank = np.empty(order.size, dtype=int)
    rank[np.argsort(alpha, kind="stable")] = np.arange(order.size)
    fd = SpatialDesign(design.locations, Bt, np.diag(alpha), design.penalty_rank_tolerance)
    return FrequencyBasis(fd, rank, align)
