"""Random instance factories shared by the test modules."""
from __future__ import annotations

import numpy as np

from spatconf.bases import build_gp_exponential, build_graph_laplacian, build_thin_plate
from spatconf.spectral import ModelParams, SpatialDesign, decompose

KINDS = ("generic", "thin_plate", "gp_exponential", "graph_laplacian")


def random_psd(rng, p, nullity=0):
    A = rng.standard_normal((p, p))
    Q, _ = np.linalg.qr(A)
    ev = rng.uniform(0.1, 10.0, p)
    ev[:nullity] = 0.0
    S = (Q * ev) @ Q.T
    return 0.5 * (S + S.T)


def random_adjacency(rng, n, prob=0.3):
    A = (rng.uniform(size=(n, n)) < prob).astype(float)
    A = np.triu(A, 1)
    return A + A.T


def random_design(rng, n, kind="generic", p=None):
    """A design of the requested kind on ``n`` uniform points."""
    loc = rng.uniform(size=(n, 2))
    if kind == "generic":
        p = int(rng.integers(1, n + 1)) if p is None else p
        B = rng.standard_normal((n, p))
        nullity = int(rng.integers(0, min(p, 3) + 1))
        return SpatialDesign(loc, B, random_psd(rng, p, nullity))
    if kind == "thin_plate":
        p = int(rng.integers(3, n + 1)) if p is None else p
        return build_thin_plate(loc, p)
    if kind == "gp_exponential":
        return build_gp_exponential(loc, float(rng.uniform(0.02, 0.3)))
    if kind == "graph_laplacian":
        return build_graph_laplacian(random_adjacency(rng, n), loc)
    raise ValueError(kind)


def random_params(rng):
    return ModelParams(float(10 ** rng.uniform(-2, 2)), float(10 ** rng.uniform(-1, 1)))


def spatial_vector(decomp, rng, scale=1.0):
    """A vector in the spatial span (no non-spatial coordinates)."""
    c = rng.standard_normal(decomp.p) * scale
    return decomp.spatial_basis @ c


def random_instance(seed, n_max=40, kind=None):
    rng = np.random.default_rng(seed)
    kind = KINDS[int(rng.integers(len(KINDS)))] if kind is None else kind
    n = int(rng.integers(5, n_max + 1))
    design = random_design(rng, n, kind)
    params = random_params(rng)
    return rng, design, params, decompose(design, params)
