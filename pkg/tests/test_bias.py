import numpy as np
import pytest

from spatconf.bias import (
    ZeroCase,
    bias_exact,
    bias_lambda_sweep,
    bias_nonspatial,
    bias_spectral,
    estimator_variance,
    lambda_limits,
)
from spatconf.estimators import fit_gls, fit_nonspatial, gls_estimates
from spatconf.exceptions import PreconditionError, UndefinedBiasError, ValidationError
from spatconf.spectral import FrequencyCoordinates, ModelParams, SpatialDesign, coordinates, decompose

from helpers import random_design, random_psd, spatial_vector

REPS = 20_000


def _instance(seed=0, n=10, p=6, nullity=0, lam=0.8, sigma2=1.0):
    rng = np.random.default_rng(seed)
    d = SpatialDesign(rng.uniform(size=(n, 2)), rng.standard_normal((n, p)),
                      random_psd(rng, p, nullity))
    params = ModelParams(lam, sigma2)
    return rng, d, params, decompose(d, params)


class TestBiasExact:
    def test_zero_confounder(self):
        rng, d, params, dec = _instance()
        rep = bias_exact(rng.standard_normal(10), np.zeros(10), dec)
        assert rep.bias == 0 and rep.correlation_term == 0

    def test_proportional_confounder(self):
        rng, d, params, dec = _instance(1)
        x = rng.standard_normal(10)
        assert bias_exact(x, -2.5 * x, dec).bias == pytest.approx(-2.5, rel=1e-12)

    def test_factorisation(self):
        rng, d, params, dec = _instance(2)
        x, z = rng.standard_normal(10), spatial_vector(dec, rng)
        rep = bias_exact(x, z, dec)
        assert rep.bias == pytest.approx(rep.correlation_term * rep.relative_size_term, rel=1e-12)
        assert rep.bias == pytest.approx(rep.numerator / rep.denominator, rel=1e-12)
        assert -1 - 1e-12 <= rep.correlation_term <= 1 + 1e-12
        assert rep.denominator > 0

    def test_design_and_decomposition_routes_agree(self):
        rng, d, params, dec = _instance(3)
        x, z = rng.standard_normal(10), rng.standard_normal(10)
        assert bias_exact(x, z, d, params).bias == pytest.approx(bias_exact(x, z, dec).bias, rel=1e-9)

    def test_zero_x(self):
        _, _, _, dec = _instance()
        with pytest.raises(UndefinedBiasError):
            bias_exact(np.zeros(10), np.ones(10), dec)

    def test_monte_carlo_oracle(self):
        rng, d, params, dec = _instance(4)
        beta = 0.5
        x, z = rng.standard_normal(10), spatial_vector(dec, rng)
        Y = (beta * x + z)[:, None] + np.sqrt(params.sigma2) * rng.standard_normal((10, REPS))
        est = gls_estimates(dec, x, Y) - beta
        se = est.std(ddof=1) / np.sqrt(REPS)
        assert abs(est.mean() - bias_exact(x, z, dec).bias) < 3 * se
        # the vectorised path agrees with the single-fit path
        assert fit_gls(Y[:, 0], x, dec, params).beta_hat - beta == pytest.approx(est[0], abs=1e-10)


class TestBiasSpectral:
    def test_disjoint_supports(self):
        xs = FrequencyCoordinates(np.array([1.0]), np.array([1.0, 0.0, 2.0]))
        zs = FrequencyCoordinates(np.array([0.0]), np.array([0.0, 3.0, 0.0]))
        assert bias_spectral(xs, zs, [0.2, 0.5, 0.9]) == 0

    def test_single_shared_component(self):
        xs = FrequencyCoordinates(np.zeros(2), np.array([0.0, 2.0, 0.0]))
        zs = FrequencyCoordinates(np.zeros(2), np.array([1.0, 3.0, 0.0]))
        assert bias_spectral(xs, zs, [0.3, 0.4, 0.8]) == pytest.approx(1.5, rel=1e-14)

    def test_matches_exact(self):
        rng, d, params, dec = _instance(5, nullity=1)
        x, z = rng.standard_normal(10), spatial_vector(dec, rng)
        b = bias_spectral(coordinates(dec, x), coordinates(dec, z), dec.weights)
        ref = bias_exact(x, z, d, params).bias
        assert abs(b - ref) <= 1e-10 * (1 + abs(ref))

    def test_nonspatial_confounder_rejected(self):
        xs = FrequencyCoordinates(np.ones(2), np.ones(2))
        zs = FrequencyCoordinates(np.array([0.0, 1.0]), np.ones(2))
        with pytest.raises(PreconditionError):
            bias_spectral(xs, zs, [0.5, 0.5])

    def test_weights_length_checked(self):
        xs = FrequencyCoordinates(np.ones(1), np.ones(2))
        with pytest.raises(ValidationError):
            bias_spectral(xs, FrequencyCoordinates(np.zeros(1), np.ones(2)), [0.5])


class TestBiasNonspatial:
    def test_orthogonal_after_centering(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        z = np.array([1.0, -1.0, -1.0, 1.0])
        assert bias_nonspatial(x, z) == pytest.approx(0.0, abs=1e-15)

    def test_identity(self):
        x = np.random.default_rng(0).standard_normal(9)
        assert bias_nonspatial(x, x) == pytest.approx(1.0, rel=1e-14)

    def test_constant_x(self):
        with pytest.raises(UndefinedBiasError):
            bias_nonspatial(np.full(5, 3.0), np.arange(5.0))

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(6)
        n, beta = 12, -0.3
        x, z = rng.standard_normal(n), rng.standard_normal(n)
        E = rng.standard_normal((n, REPS))
        Y = (beta * x + z)[:, None] + E
        xc = x - x.mean()
        est = xc @ (Y - Y.mean(axis=0)) / (xc @ xc) - beta
        se = est.std(ddof=1) / np.sqrt(REPS)
        assert abs(est.mean() - bias_nonspatial(x, z)) < 3 * se
        assert fit_nonspatial(Y[:, 0], x).beta_hat - beta == pytest.approx(est[0], abs=1e-12)

    def test_equals_spectral_form_with_unit_weights(self):
        rng, d, params, dec = _instance(7)
        x, z = rng.standard_normal(10), spatial_vector(dec, rng)
        xc, zc = x - x.mean(), z - z.mean()
        ex, ez = dec.transform(xc), dec.transform(zc)
        assert bias_nonspatial(x, z) == pytest.approx(ex @ ez / (ex @ ex), rel=1e-10)


class TestLambdaLimits:
    def test_nonspatial_present_zero_limit(self):
        xs = FrequencyCoordinates(np.array([0.5]), np.array([1.0, 2.0]))
        zs = FrequencyCoordinates(np.zeros(1), np.array([1.0, 1.0]))
        lim = lambda_limits(xs, zs, [1.0, 2.0])
        assert lim.limit_at_zero == 0 and lim.zero_case is ZeroCase.NONSPATIAL_PRESENT

    def test_infinity_limit_equals_nonspatial_formula(self):
        xs = FrequencyCoordinates(np.zeros(1), np.array([1.0, 2.0, -1.0]))
        zs = FrequencyCoordinates(np.zeros(1), np.array([0.5, 1.0, 2.0]))
        lim = lambda_limits(xs, zs, [0.5, 1.0, 4.0])
        assert lim.zero_case is ZeroCase.FULLY_SPATIAL
        assert lim.limit_at_infinity == pytest.approx(xs.full @ zs.full / (xs.full @ xs.full))

    def test_numerical_limits(self):
        rng, d, params, dec = _instance(8, n=12, p=12)
        z = spatial_vector(dec, rng)
        x = spatial_vector(dec, rng)
        cx, cz = coordinates(dec, x), coordinates(dec, z)
        lim = lambda_limits(cx, cz, dec.penalty_eigenvalues)
        for lam, want in ((1e-10, lim.limit_at_zero), (1e10, lim.limit_at_infinity)):
            w = dec.with_params(ModelParams(lam, 1.0)).weights
            assert bias_spectral(cx, cz, w) == pytest.approx(want, rel=1e-4)

    def test_undefined_denominator(self):
        xs = FrequencyCoordinates(np.zeros(1), np.array([1.0, 0.0]))
        zs = FrequencyCoordinates(np.zeros(1), np.array([1.0, 1.0]))
        with pytest.raises(UndefinedBiasError):
            lambda_limits(xs, zs, [0.0, 1.0])


class TestSweep:
    def test_zero_confounder(self):
        rng, d, params, dec = _instance(9)
        pts = bias_lambda_sweep(rng.standard_normal(10), np.zeros(10), d, 1.0, [0.1, 1, 10])
        assert all(p.spatial_bias == 0 for p in pts)

    def test_single_point(self):
        rng, d, params, dec = _instance(10, lam=2.0, sigma2=0.5)
        x, z = rng.standard_normal(10), spatial_vector(dec, rng)
        (pt,) = bias_lambda_sweep(x, z, d, 0.5, [2.0])
        want = bias_spectral(coordinates(dec, x), coordinates(dec, z), dec.weights)
        assert pt.spatial_bias == pytest.approx(want, rel=1e-12)
        assert pt.nonspatial_bias == pytest.approx(bias_nonspatial(x, z))

    def test_endpoints_match_limits(self):
        rng, d, params, dec = _instance(11, nullity=2)
        x, z = rng.standard_normal(10), spatial_vector(dec, rng)
        pts = bias_lambda_sweep(x, z, d, 1.0, np.logspace(-8, 8, 17))
        lim = lambda_limits(coordinates(dec, x), coordinates(dec, z), dec.penalty_eigenvalues)
        assert pts[0].spatial_bias == pytest.approx(lim.limit_at_zero, abs=1e-3)
        assert pts[-1].spatial_bias == pytest.approx(lim.limit_at_infinity, abs=1e-3)
        assert len({p.nonspatial_bias for p in pts}) == 1

    def test_trend_toward_nonspatial_value(self):
        from spatconf.simulation import generate_scenario, preset

        spec = preset("S5", n=200, sigma_x=2.0, replicates=2)
        for rep in generate_scenario(spec, with_design=True):
            pts = bias_lambda_sweep(rep.x, rep.z, rep.design, 1.0, np.logspace(-6, 6, 49))
            b = np.abs([p.spatial_bias for p in pts])
            ns = abs(pts[0].nonspatial_bias)
            assert b[0] < 0.1 * ns
            smooth = np.convolve(b, np.ones(5) / 5, mode="valid")
            assert np.all(np.diff(smooth) >= -1e-3 * b.max())
            assert abs(b[-1] - ns) < 0.2 * ns

    @pytest.mark.parametrize("grid", [[], [1.0, 0.5], [0.0, 1.0]])
    def test_bad_grid(self, grid):
        rng, d, params, dec = _instance()
        with pytest.raises(ValidationError):
            bias_lambda_sweep(np.ones(10), np.zeros(10), d, 1.0, grid)


class TestVariance:
    def test_nonspatial_unit_vector(self):
        _, d, params, dec = _instance(13, n=10, p=4, sigma2=2.0)
        u = dec.nonspatial_basis[:, 0]
        assert estimator_variance(u, dec) == pytest.approx(2.0, rel=1e-12)

    def test_scaling(self):
        rng, d, params, dec = _instance(14)
        x = rng.standard_normal(10)
        assert estimator_variance(3 * x, dec) == pytest.approx(estimator_variance(x, dec) / 9)

    def test_zero_x(self):
        _, _, _, dec = _instance()
        with pytest.raises(UndefinedBiasError):
            estimator_variance(np.zeros(10), dec)

    def test_monte_carlo_oracle(self):
        rng, d, params, dec = _instance(15, lam=0.5, sigma2=0.7)
        x = rng.standard_normal(10)
        Sigma = params.sigma2 * np.eye(10) + d.basis @ np.linalg.inv(d.penalty) @ d.basis.T / params.lam
        L = np.linalg.cholesky(Sigma)
        Y = L @ rng.standard_normal((10, REPS))
        est = gls_estimates(dec, x, Y)
        assert est.var(ddof=1) == pytest.approx(estimator_variance(x, dec), rel=0.05)
