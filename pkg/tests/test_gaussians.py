"""Unit tests for the Gaussian/categorical algebra core.

Expected values marked with an oracle comment were computed by an
independent method (joint-covariance conditioning, scipy.stats evaluation,
or Monte Carlo) and frozen here.
"""

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from jumpgauss.gaussians import (
    AffineGaussianKernel,
    Categorical,
    CategoricalKernel,
    GaussianDensity,
    ImproperProductError,
    InputError,
    LogQuadraticForm,
    NumericError,
    average_log_gaussians,
    conditional_relative_entropy_likelihood,
    log_pdf,
    neg_relative_entropy,
    predict_and_reverse,
    quadratic_times_gaussian,
)

from helpers import (
    random_categorical,
    random_gaussian,
    random_kernel,
    random_spd,
)

HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


def scalar_gaussian(mean, var):
    return GaussianDensity(np.array([mean]), np.array([[var]]))


def scalar_kernel(a, b, q):
    return AffineGaussianKernel(np.array([[a]]), np.array([b]), np.array([[q]]))


class TestTypes:
    def test_gaussian_rejects_asymmetric_cov(self):
        with pytest.raises(InputError):
            GaussianDensity(np.zeros(2), np.array([[1.0, 0.5], [0.1, 1.0]]))

    def test_gaussian_rejects_non_pd_cov(self):
        with pytest.raises(NumericError):
            GaussianDensity(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_gaussian_symmetrizes_roundoff(self):
        cov = np.array([[1.0, 0.3 + 1e-14], [0.3, 1.0]])
        g = GaussianDensity(np.zeros(2), cov)
        assert np.max(np.abs(g.cov - g.cov.T)) == 0.0

    def test_gaussian_is_immutable(self):
        g = scalar_gaussian(0.0, 1.0)
        with pytest.raises(ValueError):
            g.cov[0, 0] = 2.0

    def test_categorical_validation(self):
        with pytest.raises(InputError):
            Categorical(np.array([0.5, 0.6]))
        with pytest.raises(InputError):
            Categorical(np.array([-0.1, 1.1]))
        with pytest.raises(InputError):
            Categorical(np.array([]))

    def test_categorical_from_log_weights(self):
        cat, log_norm = Categorical.from_log_weights(np.array([700.0, 700.0]))
        assert np.allclose(cat.probs, [0.5, 0.5])
        assert np.isclose(log_norm, 700.0 + np.log(2.0))

    def test_categorical_from_log_weights_with_minus_inf(self):
        cat, log_norm = Categorical.from_log_weights(np.array([-np.inf, 0.0]))
        assert np.allclose(cat.probs, [0.0, 1.0])
        assert np.isclose(log_norm, 0.0)

    def test_categorical_kernel_is_column_stochastic(self):
        with pytest.raises(InputError):
            CategoricalKernel(np.array([[0.9, 0.9], [0.2, 0.1]]))
        k = CategoricalKernel(np.array([[0.9, 0.2], [0.1, 0.8]]))
        pushed = k.apply(Categorical(np.array([1.0, 0.0])))
        # column 0 is the conditional given source regime 0
        assert np.allclose(pushed.probs, [0.9, 0.1])

    def test_log_quadratic_form_evaluation(self):
        lq = LogQuadraticForm(np.array([[2.0]]), np.array([3.0]), -1.0)
        x = np.array([0.5])
        assert np.isclose(lq(x), -1.0 + 1.5 - 0.5 * 2.0 * 0.25)

    def test_log_quadratic_from_gaussian_matches_log_pdf(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            g = random_gaussian(rng, rng.integers(1, 4))
            lq = LogQuadraticForm.from_gaussian(g)
            x = rng.standard_normal(g.dim)
            assert np.isclose(lq(x), log_pdf(g, x), atol=1e-10)


class TestLogPdf:
    def test_standard_normal_at_mode(self):
        assert np.isclose(log_pdf(scalar_gaussian(0, 1), [0.0]), -HALF_LOG_2PI)

    def test_standard_normal_at_one(self):
        assert np.isclose(log_pdf(scalar_gaussian(0, 1), [1.0]), -HALF_LOG_2PI - 0.5)

    def test_bivariate_identity(self):
        g = GaussianDensity(np.zeros(2), np.eye(2))
        assert np.isclose(log_pdf(g, [1.0, 1.0]), -np.log(2 * np.pi) - 1.0)

    def test_matches_scipy(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            d = rng.integers(1, 5)
            g = random_gaussian(rng, d)
            x = rng.standard_normal(d)
            expected = multivariate_normal.logpdf(x, g.mean, g.cov)
            assert np.isclose(log_pdf(g, x), expected, atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            log_pdf(scalar_gaussian(0, 1), [0.0, 0.0])


class TestPredictAndReverse:
    def test_random_walk_example(self):
        pred, rev = predict_and_reverse(scalar_gaussian(0, 1), scalar_kernel(1, 0, 1))
        # oracle: joint-covariance conditioning
        assert np.isclose(pred.mean[0], 0.0)
        assert np.isclose(pred.cov[0, 0], 2.0)
        assert np.isclose(rev.slope[0, 0], 0.5)
        assert np.isclose(rev.offset[0], 0.0)
        assert np.isclose(rev.cov[0, 0], 0.5)

    def test_stationary_ar1_example(self):
        pred, rev = predict_and_reverse(
            scalar_gaussian(0, 1), scalar_kernel(0.5, 0, 0.75)
        )
        # oracle: joint-covariance conditioning
        assert np.isclose(pred.cov[0, 0], 1.0)
        assert np.isclose(rev.slope[0, 0], 0.5)
        assert np.isclose(rev.cov[0, 0], 0.75)

    def test_degenerate_kernel_rejected(self):
        with pytest.raises(NumericError):
            scalar_kernel(1.0, 0.0, 0.0)

    def test_joint_reconstruction_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            d_in = int(rng.integers(1, 4))
            d_out = int(rng.integers(1, 4))
            prior = random_gaussian(rng, d_in)
            kernel = random_kernel(rng, d_in, d_out)
            pred, rev = predict_and_reverse(prior, kernel)
            for _ in range(4):
                x = rng.standard_normal(d_in)
                x_next = rng.standard_normal(d_out)
                lhs = kernel.log_pdf(x_next, x) + log_pdf(prior, x)
                rhs = log_pdf(pred, x_next) + rev.log_pdf(x, x_next)
                assert np.isclose(lhs, rhs, atol=1e-9)

    def test_reverse_matches_joint_conditioning_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            d = int(rng.integers(1, 4))
            prior = random_gaussian(rng, d)
            kernel = random_kernel(rng, d, d)
            pred, rev = predict_and_reverse(prior, kernel)
            pred_cov = kernel.slope @ prior.cov @ kernel.slope.T + kernel.cov
            gain = prior.cov @ kernel.slope.T @ np.linalg.inv(pred_cov)
            assert np.allclose(rev.slope, gain, atol=1e-9)
            assert np.allclose(
                rev.offset, prior.mean - gain @ pred.mean, atol=1e-9
            )
            assert np.allclose(
                rev.cov, prior.cov - gain @ pred_cov @ gain.T, atol=1e-9
            )


class TestNegRelativeEntropy:
    def test_identical_inputs(self):
        g = scalar_gaussian(0, 1)
        assert neg_relative_entropy(g, g) == pytest.approx(0.0, abs=1e-12)

    def test_unit_mean_shift(self):
        # oracle: hand evaluation, cross-checked by Monte Carlo below
        value = neg_relative_entropy(scalar_gaussian(1, 1), scalar_gaussian(0, 1))
        assert np.isclose(value, -0.5)

    def test_variance_mismatch(self):
        # oracle: hand evaluation of the closed form
        value = neg_relative_entropy(scalar_gaussian(0, 2), scalar_gaussian(0, 1))
        assert np.isclose(value, -0.09657359027997264)

    def test_always_nonpositive(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            d = int(rng.integers(1, 4))
            value = neg_relative_entropy(random_gaussian(rng, d), random_gaussian(rng, d))
            assert value <= 1e-12

    def test_monte_carlo_cross_check(self):
        rng = np.random.default_rng(5)
        g_star = scalar_gaussian(1, 1)
        g = scalar_gaussian(0, 1)
        xs = rng.normal(0.0, 1.0, size=1_000_000)
        samples = -0.5 * (xs - 1.0) ** 2 + 0.5 * xs**2
        se = samples.std() / np.sqrt(samples.size)
        assert abs(neg_relative_entropy(g_star, g) - samples.mean()) < 3 * se


class TestAverageLogGaussians:
    def test_single_component(self):
        g = scalar_gaussian(0.3, 2.0)
        log_zeta, gbar = average_log_gaussians([g], Categorical(np.array([1.0])))
        assert np.isclose(log_zeta, 0.0, atol=1e-12)
        assert np.allclose(gbar.mean, g.mean)
        assert np.allclose(gbar.cov, g.cov)

    def test_two_unit_variance_components(self):
        # oracle: evaluate both sides of the identity at probe points
        log_zeta, gbar = average_log_gaussians(
            [scalar_gaussian(0, 1), scalar_gaussian(2, 1)],
            Categorical(np.array([0.5, 0.5])),
        )
        assert np.allclose(gbar.mean, [1.0])
        assert np.allclose(gbar.cov, [[1.0]])
        assert np.isclose(log_zeta, -0.5)

    def test_precision_averaging(self):
        # oracle: identity evaluated at x=0
        log_zeta, gbar = average_log_gaussians(
            [scalar_gaussian(0, 1), scalar_gaussian(0, 4)],
            Categorical(np.array([0.5, 0.5])),
        )
        assert np.allclose(gbar.cov, [[1.6]])
        assert np.isclose(log_zeta, -0.11157177565710508)

    def test_defining_identity_at_probes(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            d = int(rng.integers(1, 4))
            m = int(rng.integers(1, 5))
            comps = [random_gaussian(rng, d) for _ in range(m)]
            weights = random_categorical(rng, m)
            log_zeta, gbar = average_log_gaussians(comps, weights)
            assert log_zeta <= 1e-10
            for _ in range(5):
                x = rng.standard_normal(d)
                lhs = sum(
                    w * log_pdf(c, x) for c, w in zip(comps, weights.probs)
                )
                rhs = log_zeta + log_pdf(gbar, x)
                assert np.isclose(lhs, rhs, atol=1e-10)

    def test_empty_components_rejected(self):
        with pytest.raises(InputError):
            average_log_gaussians([], Categorical(np.array([1.0])))


class TestConditionalRelativeEntropyLikelihood:
    def test_identical_kernels_vanish(self):
        rng = np.random.default_rng(7)
        k = random_kernel(rng, 2, 2)
        log_c, y, H, S = conditional_relative_entropy_likelihood(k, k)
        assert np.allclose(H, 0.0)
        assert np.allclose(y, 0.0)
        for _ in range(5):
            x = rng.standard_normal(2)
            g = GaussianDensity(H @ x, S)
            assert np.isclose(log_c + log_pdf(g, y), 0.0, atol=1e-10)

    def test_mean_shift_kernels(self):
        # oracle: hand expansion gives -1/2 for every x
        k1 = scalar_kernel(1, 0, 1)
        k2 = scalar_kernel(1, 1, 1)
        log_c, y, H, S = conditional_relative_entropy_likelihood(k1, k2)
        for x in (-2.0, 0.0, 3.5):
            value = log_c + log_pdf(GaussianDensity(H @ np.array([x]), S), y)
            assert np.isclose(value, -0.5, atol=1e-12)

    def test_slope_mismatch_against_monte_carlo(self):
        # E_{y ~ N(x,1)}[ log N(y;0,1) - log N(y;x,1) ] = -x^2/2
        k1 = scalar_kernel(1, 0, 1)
        k2 = scalar_kernel(0, 0, 1)
        log_c, y, H, S = conditional_relative_entropy_likelihood(k1, k2)
        rng = np.random.default_rng(8)
        for x in (0.0, 1.0, -1.5):
            closed = log_c + log_pdf(GaussianDensity(H @ np.array([x]), S), y)
            assert np.isclose(closed, -0.5 * x**2, atol=1e-12)
            ys = rng.normal(x, 1.0, size=1_000_000)
            samples = -0.5 * ys**2 + 0.5 * (ys - x) ** 2
            se = samples.std() / np.sqrt(samples.size)
            assert abs(closed - samples.mean()) < max(3 * se, 1e-8)

    def test_random_kernels_against_monte_carlo(self):
        rng = np.random.default_rng(9)
        for _ in range(3):
            k1 = random_kernel(rng, 2, 2)
            k2 = random_kernel(rng, 2, 2)
            log_c, y, H, S = conditional_relative_entropy_likelihood(k1, k2)
            x = rng.standard_normal(2)
            closed = log_c + log_pdf(GaussianDensity(H @ x, S), y)
            chol = np.linalg.cholesky(k1.cov)
            noise = rng.standard_normal((200_000, 2)) @ chol.T
            ys = k1.slope @ x + k1.offset + noise
            lp1 = multivariate_normal.logpdf(ys, k1.slope @ x + k1.offset, k1.cov)
            lp2 = multivariate_normal.logpdf(ys, k2.slope @ x + k2.offset, k2.cov)
            samples = lp2 - lp1
            se = samples.std() / np.sqrt(samples.size)
            assert abs(closed - samples.mean()) < 4 * se


class TestQuadraticTimesGaussian:
    def test_neutral_element(self):
        g = scalar_gaussian(0.7, 1.3)
        log_norm, post = quadratic_times_gaussian(LogQuadraticForm.zero(1), g)
        assert np.isclose(log_norm, 0.0, atol=1e-12)
        assert np.allclose(post.mean, g.mean)
        assert np.allclose(post.cov, g.cov)

    def test_product_of_gaussians(self):
        # oracle: product-of-Gaussians formula, log_norm = log N(1; 0, 2)
        lq = LogQuadraticForm.from_gaussian(scalar_gaussian(1, 1))
        log_norm, post = quadratic_times_gaussian(lq, scalar_gaussian(0, 1))
        assert np.allclose(post.mean, [0.5])
        assert np.allclose(post.cov, [[0.5]])
        assert np.isclose(log_norm, -1.5155121234846454)

    def test_improper_product_rejected(self):
        lq = LogQuadraticForm(np.array([[-2.0]]), np.zeros(1), 0.0)
        with pytest.raises(ImproperProductError):
            quadratic_times_gaussian(lq, scalar_gaussian(0, 1))

    def test_pointwise_identity(self):
        rng = np.random.default_rng(10)
        for _ in range(25):
            d = int(rng.integers(1, 4))
            g = random_gaussian(rng, d)
            j_mat = random_spd(rng, d, scale=0.5)
            lq = LogQuadraticForm(j_mat, rng.standard_normal(d), rng.standard_normal())
            log_norm, post = quadratic_times_gaussian(lq, g)
            for _ in range(5):
                x = rng.standard_normal(d)
                lhs = lq(x) + log_pdf(g, x)
                rhs = log_norm + log_pdf(post, x)
                assert np.isclose(lhs, rhs, atol=1e-10)

    def test_symmetry_of_returned_covariances(self):
        rng = np.random.default_rng(11)
        g = random_gaussian(rng, 3)
        lq = LogQuadraticForm(random_spd(rng, 3), rng.standard_normal(3), 0.0)
        _, post = quadratic_times_gaussian(lq, g)
        assert np.max(np.abs(post.cov - post.cov.T)) <= 1e-12
