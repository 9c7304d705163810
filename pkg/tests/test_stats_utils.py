import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import special, stats

from utils.errors import DimensionMismatch, InsufficientSamples, InvalidProbability, NotPositiveDefinite, ValidationError
from utils.stats_utils import (GaussianModel, Parameterization, chi2_cdf, chi2_inverse_cdf, chi2_inverse_sf, chi2_sf,
                               cholesky_logdet, ellipsoid_log_volume, estimate_gaussian, mahalanobis_sq,
                               random_rotation, reduce_covariance)


class TestParameterization:

    @pytest.mark.parametrize("name, expected", [
        ("sphere", Parameterization.ISOTROPIC),
        ("isotropic", Parameterization.ISOTROPIC),
        ("axis", Parameterization.AXIS_ALIGNED),
        ("diagonal", Parameterization.AXIS_ALIGNED),
        ("FULL", Parameterization.FULL_ELLIPSOID),
        ("full_ellipsoid", Parameterization.FULL_ELLIPSOID),
    ])
    def test_parse(self, name, expected):
        assert Parameterization.parse(name) is expected

    def test_parse_unknown(self):
        with pytest.raises(ValidationError):
            Parameterization.parse("cube")

    def test_reduce_covariance(self):
        cov = np.array([[4.0, 1.0], [1.0, 2.0]])
        assert_allclose(reduce_covariance(cov, "full"), cov)
        assert_allclose(reduce_covariance(cov, "axis"), np.diag([4.0, 2.0]))
        assert_allclose(reduce_covariance(cov, "sphere"), 3.0 * np.eye(2))

    def test_gaussian_model_reduces_covariance(self):
        g = GaussianModel(np.zeros(2), [[4.0, 1.0], [1.0, 2.0]], "axis")
        assert g.parameterization is Parameterization.AXIS_ALIGNED
        assert_allclose(g.covariance, np.diag([4.0, 2.0]))
        assert g.log_det == pytest.approx(math.log(8.0))


class TestCholesky:

    def test_log_det_matches_slogdet(self, rng):
        a = rng.standard_normal((5, 5))
        cov = a @ a.T + 5 * np.eye(5)
        factor = cholesky_logdet(cov)
        assert factor.jitter == 0.0
        assert factor.log_det == pytest.approx(np.linalg.slogdet(cov)[1], rel=1e-12)
        assert_allclose(factor.lower @ factor.lower.T, cov, atol=1e-12)

    def test_singular_matrix_is_jittered(self):
        factor = cholesky_logdet([[1.0, 1.0], [1.0, 1.0]])
        assert factor.jitter > 0
        assert np.isfinite(factor.log_det)

    def test_negative_definite(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_logdet(-np.eye(3))

    def test_non_finite(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_logdet([[1.0, np.nan], [np.nan, 1.0]])

    def test_not_square(self):
        with pytest.raises(DimensionMismatch):
            cholesky_logdet(np.ones((2, 3)))


class TestGaussian:

    def test_biased_covariance(self, rng):
        x = rng.standard_normal((50, 3))
        g = estimate_gaussian(x)
        assert_allclose(g.mean, x.mean(axis=0))
        assert_allclose(g.covariance, np.cov(x.T, bias=True), atol=1e-14)

    def test_accepts_list_of_vectors(self):
        g = estimate_gaussian([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
        assert_allclose(g.mean, [1.0, 1.0])
        assert_allclose(g.covariance, np.eye(2))

    def test_needs_two_samples(self):
        with pytest.raises(InsufficientSamples):
            estimate_gaussian([[1.0, 2.0]])

    def test_ragged_samples(self):
        with pytest.raises(DimensionMismatch):
            estimate_gaussian([[1.0, 2.0], [1.0, 2.0, 3.0]])

    def test_identical_samples_are_jittered(self):
        g = estimate_gaussian(np.ones((4, 2)))
        assert g.jitter > 0
        assert np.isfinite(g.log_det)

    def test_mahalanobis_identity(self):
        g = GaussianModel(np.zeros(3), np.eye(3))
        assert mahalanobis_sq([1.0, -2.0, 0.5], g) == pytest.approx(5.25)

    def test_mahalanobis_scaled(self):
        g = GaussianModel(np.array([1.0, 1.0]), np.diag([4.0, 0.25]))
        assert mahalanobis_sq([3.0, 2.0], g) == pytest.approx(1.0 + 4.0)

    def test_mahalanobis_dimension(self):
        with pytest.raises(DimensionMismatch):
            mahalanobis_sq([1.0, 2.0], GaussianModel(np.zeros(3), np.eye(3)))


class TestChiSquared:

    def test_known_quantile(self):
        assert chi2_inverse_cdf(0.95, 1) == pytest.approx(3.841458820694124, rel=1e-10)

    @pytest.mark.parametrize("q", [1e-12, 1e-6, 1e-2, 0.5])
    def test_two_dof_closed_form(self, q):
        # for d = 2 the survival function is exp(-x / 2)
        assert chi2_inverse_sf(q, 2) == pytest.approx(-2.0 * math.log(q), rel=1e-10)

    @pytest.mark.parametrize("d", [1, 2, 8, 64])
    @pytest.mark.parametrize("p", [1e-3, 0.3, 0.99])
    def test_inverse_cdf_agrees_with_scipy(self, p, d):
        x = chi2_inverse_cdf(p, d)
        assert x == pytest.approx(stats.chi2.ppf(p, d), rel=1e-9)
        assert chi2_cdf(x, d) == pytest.approx(p, rel=1e-10)

    @pytest.mark.parametrize("p", [1e-9, 1e-4, 0.5, 0.99, 0.999])
    def test_two_dof_inverse_cdf(self, p):
        assert abs(chi2_inverse_cdf(p, 2) + 2.0 * math.log1p(-p)) <= 1e-8

    @pytest.mark.parametrize("q", [1e-10, 1e-6, 1e-2, 0.3, 0.9])
    def test_four_dof_erlang_closed_form(self, q):
        # sf(x) = exp(-x / 2) (1 + x / 2) inverts through the lower Lambert W branch
        expected = -2.0 * (1.0 + special.lambertw(-q / math.e, k=-1).real)
        assert abs(chi2_inverse_sf(q, 4) - expected) <= 1e-8

    def test_random_round_trips(self, rng):
        for p, d in zip(rng.uniform(1e-6, 1.0 - 1e-6, size=1000), rng.integers(1, 513, size=1000)):
            x = chi2_inverse_cdf(p, int(d))
            assert abs(chi2_cdf(x, int(d)) - p) <= 1e-8

    @pytest.mark.parametrize("d", [1, 4, 128])
    def test_inverse_sf_keeps_tail_precision(self, d):
        q = 1e-10
        x = chi2_inverse_sf(q, d)
        assert chi2_sf(x, d) == pytest.approx(q, rel=1e-8)
        assert x == pytest.approx(stats.chi2.isf(q, d), rel=1e-9)

    def test_quantile_grows_with_dimension(self):
        quantiles = [chi2_inverse_cdf(0.99, d) for d in (1, 2, 4, 8, 16)]
        assert all(a < b for a, b in zip(quantiles, quantiles[1:]))

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_rejects_probability(self, p):
        with pytest.raises(InvalidProbability):
            chi2_inverse_cdf(p, 2)
        with pytest.raises(InvalidProbability):
            chi2_inverse_sf(p, 2)

    @pytest.mark.parametrize("d", [0, -1, 1.5])
    def test_rejects_degrees_of_freedom(self, d):
        with pytest.raises(ValidationError):
            chi2_cdf(1.0, d)

    def test_cdf_rejects_negative_radius(self):
        with pytest.raises(ValidationError):
            chi2_cdf(-1.0, 2)


class TestVolumes:

    def test_unit_disk(self):
        g = GaussianModel(np.zeros(2), np.eye(2))
        assert ellipsoid_log_volume(g, 1.0) == pytest.approx(math.log(math.pi))

    def test_scaled_ball(self):
        g = GaussianModel(np.zeros(3), 4.0 * np.eye(3))
        # semi-axes 2 * r = 4
        assert ellipsoid_log_volume(g, 2.0) == pytest.approx(math.log(4.0 / 3.0 * math.pi * 4.0 ** 3))

    def test_rejects_radius(self):
        with pytest.raises(ValidationError):
            ellipsoid_log_volume(GaussianModel(np.zeros(2), np.eye(2)), 0.0)

    def test_random_rotation_is_orthogonal(self, rng):
        q = random_rotation(6, rng)
        assert_allclose(q @ q.T, np.eye(6), atol=1e-12)

    def test_log_volume_is_rotation_invariant(self, rng):
        a = rng.standard_normal((16, 16))
        cov = a @ a.T + np.eye(16)
        rot = random_rotation(16, rng)
        base = ellipsoid_log_volume(GaussianModel(np.zeros(16), cov), 2.5)
        rotated = ellipsoid_log_volume(GaussianModel(rng.standard_normal(16), rot @ cov @ rot.T), 2.5)
        assert rotated == pytest.approx(base, rel=1e-10)

    @pytest.mark.parametrize("cov, r", [(np.eye(2), 1.0), (np.array([[4.0, 1.0], [1.0, 2.0]]), 3.0)])
    def test_area_matches_rejection_sampling(self, rng, cov, r):
        # the radius-r ellipse fits the box of half-widths r * sqrt(diag(cov))
        half = r * np.sqrt(np.diag(cov))
        points = rng.uniform(-half, half, size=(1_000_000, 2))
        inside = np.einsum("ni,ij,nj->n", points, np.linalg.inv(cov), points) <= r ** 2
        estimate = inside.mean() * np.prod(2.0 * half)
        assert estimate == pytest.approx(math.exp(ellipsoid_log_volume(GaussianModel(np.zeros(2), cov), r)), rel=1e-2)
