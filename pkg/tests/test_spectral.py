import numpy as np
import pytest

from spatconf.exceptions import NumericalError, ValidationError
from spatconf.spectral import (
    FrequencyCoordinates,
    ModelParams,
    SpatialDesign,
    coordinates,
    decompose,
    dense_precision,
    smoothing_weights,
    weighted_inner_product,
)

from helpers import random_design, random_psd


def dense_sigma(design, params):
    """Marginal covariance with an invertible penalty."""
    Sinv = np.linalg.inv(design.penalty)
    B = design.basis
    return params.sigma2 * np.eye(design.n) + B @ Sinv @ B.T / params.lam


class TestModelParams:
    def test_rejects_negative_lambda(self):
        with pytest.raises(ValidationError):
            ModelParams(-1.0, 1.0)

    def test_rejects_nonpositive_sigma2(self):
        with pytest.raises(ValidationError):
            ModelParams(1.0, 0.0)

    def test_smoothing_product(self):
        assert ModelParams(2.0, 3.0).smoothing == 6.0
        assert ModelParams.from_smoothing(6.0, 3.0).lam == 2.0


class TestSpatialDesign:
    def test_nonsymmetric_penalty(self):
        S = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValidationError):
            SpatialDesign(np.zeros((3, 2)), np.ones((3, 2)), S)

    def test_indefinite_penalty(self):
        with pytest.raises(ValidationError):
            SpatialDesign(np.zeros((3, 2)), np.ones((3, 2)), np.diag([1.0, -1.0]))

    def test_tiny_negative_eigenvalue_clamped(self):
        S = np.diag([1.0, -1e-14])
        d = SpatialDesign(np.zeros((3, 2)), np.eye(3)[:, :2], S)
        assert np.linalg.eigvalsh(d.penalty).min() >= 0

    def test_row_mismatch(self):
        with pytest.raises(ValidationError):
            SpatialDesign(np.zeros((4, 2)), np.ones((3, 2)), np.eye(2))

    def test_more_columns_than_rows(self):
        with pytest.raises(ValidationError):
            SpatialDesign(np.zeros((2, 2)), np.ones((2, 3)), np.eye(3))

    def test_with_intercept_appends_constant(self):
        rng = np.random.default_rng(0)
        d = SpatialDesign(rng.uniform(size=(6, 2)), rng.standard_normal((6, 2)), np.eye(2))
        d1 = d.with_intercept()
        assert d1.p == 3
        assert d1.penalty[2, 2] == 0
        assert d1.with_intercept().p == 3


class TestDecompose:
    def test_identity_basis_half_weights(self):
        d = SpatialDesign(np.zeros((5, 1)), np.eye(5), np.eye(5))
        dec = decompose(d, ModelParams(1.0, 1.0))
        assert dec.split == 0
        np.testing.assert_allclose(dec.weights, 0.5, atol=1e-14)

    def test_unpenalised_direction_has_zero_weight(self):
        rng = np.random.default_rng(1)
        S = random_psd(rng, 4, nullity=1)
        d = SpatialDesign(rng.uniform(size=(8, 2)), rng.standard_normal((8, 4)), S)
        dec = decompose(d, ModelParams(3.0, 0.5))
        assert dec.penalty_eigenvalues[0] == 0
        assert dec.weights[0] == 0

    def test_small_instance_matches_dense_inverse(self):
        rng = np.random.default_rng(2)
        d = SpatialDesign(rng.uniform(size=(8, 2)), rng.standard_normal((8, 4)), random_psd(rng, 4))
        params = ModelParams(0.7, 1.3)
        dec = decompose(d, params)
        ev = np.sort(np.linalg.eigvalsh(np.linalg.inv(dense_sigma(d, params))))
        want = np.sort(np.concatenate([np.ones(dec.split), dec.weights]) / params.sigma2)
        np.testing.assert_allclose(ev, want, atol=1e-8)

    def test_orthonormal_and_ordered(self):
        rng = np.random.default_rng(3)
        d = random_design(rng, 30, "thin_plate", p=12)
        dec = decompose(d, ModelParams(2.0, 1.0))
        U = dec.eigenbasis
        assert np.max(np.abs(U.T @ U - np.eye(30))) < 1e-10
        assert np.all(np.diff(dec.penalty_eigenvalues) >= 0)
        assert dec.split == 30 - 12

    def test_weights_follow_formula(self):
        rng = np.random.default_rng(4)
        d = random_design(rng, 20, "generic", p=7)
        params = ModelParams(0.3, 2.5)
        dec = decompose(d, params)
        a = dec.penalty_eigenvalues
        np.testing.assert_array_equal(dec.weights, smoothing_weights(a, params))
        np.testing.assert_allclose(dec.weights, params.lam * a / (1 / params.sigma2 + params.lam * a))

    def test_zero_lambda_gives_zero_weights(self):
        rng = np.random.default_rng(5)
        d = random_design(rng, 10, "generic", p=4)
        dec = decompose(d, ModelParams(0.0, 1.0))
        assert np.all(dec.weights == 0)

    def test_rank_deficient_basis_reduces_spatial_block(self):
        rng = np.random.default_rng(6)
        B = rng.standard_normal((10, 3))
        B = np.column_stack([B, B[:, 0] + B[:, 1]])
        d = SpatialDesign(rng.uniform(size=(10, 2)), B, np.eye(4))
        dec = decompose(d, ModelParams(1.0, 1.0))
        assert dec.p == 3 and dec.split == 7
        M = dense_precision(d, ModelParams(1.0, 1.0))
        np.testing.assert_allclose(dec.precision_matrix(), M, atol=1e-10)

    def test_spatial_span_equals_basis_span(self):
        rng = np.random.default_rng(7)
        d = random_design(rng, 15, "generic", p=5)
        dec = decompose(d, ModelParams(1.0, 1.0))
        P = dec.spatial_basis @ dec.spatial_basis.T
        np.testing.assert_allclose(P @ d.basis, d.basis, atol=1e-10)
        assert np.max(np.abs(dec.nonspatial_basis.T @ d.basis)) < 1e-10

    def test_eigen_failure_reported_as_numerical_error(self, monkeypatch):
        import spatconf.spectral as sp

        def boom(*a, **k):
            raise np.linalg.LinAlgError("no convergence")

        monkeypatch.setattr(sp.linalg, "eigh", boom)
        rng = np.random.default_rng(8)
        with pytest.raises(NumericalError, match="cond"):
            decompose(random_design(rng, 6, "generic", p=3), ModelParams(1.0, 1.0))


class TestCoordinates:
    def setup_method(self):
        rng = np.random.default_rng(10)
        self.rng = rng
        self.dec = decompose(random_design(rng, 6, "generic", p=3), ModelParams(1.0, 1.0))

    def test_column_gives_unit_vector(self):
        for j in range(6):
            xi = coordinates(self.dec, self.dec.eigenbasis[:, j]).full
            np.testing.assert_allclose(xi, np.eye(6)[j], atol=1e-12)

    def test_zero(self):
        assert not np.any(coordinates(self.dec, np.zeros(6)).full)

    def test_matches_explicit_dot_products(self):
        v = self.rng.standard_normal(6)
        U = self.dec.eigenbasis
        want = [sum(U[i, j] * v[i] for i in range(6)) for j in range(6)]
        np.testing.assert_allclose(coordinates(self.dec, v).full, want, atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            coordinates(self.dec, np.zeros(5))

    def test_blocks(self):
        xi = coordinates(self.dec, self.rng.standard_normal(6))
        assert xi.nonspatial.shape == (3,) and xi.spatial.shape == (3,)
        back = FrequencyCoordinates.from_full(xi.full, 3)
        np.testing.assert_array_equal(back.full, xi.full)


class TestWeightedInnerProduct:
    def setup_method(self):
        rng = np.random.default_rng(11)
        self.rng = rng
        self.design = random_design(rng, 7, "generic", p=4)
        self.params = ModelParams(1.5, 0.8)
        self.dec = decompose(self.design, self.params)

    def test_zero(self):
        assert weighted_inner_product(self.dec, np.zeros(7), np.zeros(7)) == 0

    def test_nonspatial_unit(self):
        u = self.dec.nonspatial_basis[:, 0]
        assert weighted_inner_product(self.dec, u, u) == pytest.approx(1 / 0.8, rel=1e-12)

    def test_matches_dense(self):
        a, b = self.rng.standard_normal(7), self.rng.standard_normal(7)
        M = dense_precision(self.design, self.params)
        assert weighted_inner_product(self.dec, a, b) == pytest.approx(a @ M @ b, rel=1e-9)
        assert weighted_inner_product(M, a, b) == pytest.approx(a @ M @ b, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            weighted_inner_product(self.dec, np.zeros(7), np.zeros(6))


def test_dense_precision_equals_inverse_covariance():
    rng = np.random.default_rng(12)
    d = SpatialDesign(rng.uniform(size=(9, 2)), rng.standard_normal((9, 4)), random_psd(rng, 4))
    params = ModelParams(0.4, 1.7)
    np.testing.assert_allclose(dense_precision(d, params), np.linalg.inv(dense_sigma(d, params)),
                               atol=1e-9)
