"""Gaussian and categorical algebra underlying all inference routines.

Everything downstream (exact filters, variational recursions, the jump-system
solver) is assembled from the handful of closed-form identities in this
module: affine-Gaussian prediction/reversal, negative relative entropies,
precision-weighted averages of log-Gaussians, and conjugate products of a
Gaussian with a log-quadratic factor.

Conventions:
  * Covariances are stored in moment form and must be symmetric positive
    definite; information (precision) form appears only transiently inside
    operations and in :class:`LogQuadraticForm`, which may be improper.
  * All matrix solves go through Cholesky factorizations. A failed
    factorization raises :class:`NumericError` naming the offending matrix;
    nothing is silently regularized. A single optional global jitter
    (default 0, see :func:`set_global_jitter`) exists for the experiment
    harness.
  * Categorical normalizations are done in the log domain with log-sum-exp.
  * Values are immutable after construction and safe to share across threads.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

LOG_2PI = np.log(2.0 * np.pi)

_SYM_RTOL = 1e-12
_PROB_TOL = 1e-12

# Optional diagonal jitter added inside Cholesky factorizations. Deliberately
# global and zero by default: only the Monte Carlo harness is allowed to turn
# it on, and tests rely on it being off.
_GLOBAL_JITTER = 0.0


class InputError(ValueError):
    """Raised for malformed arguments: shape mismatches, bad normalizations."""


class NumericError(ArithmeticError):
    """Raised when a required factorization or solve fails.

    The message names the offending matrix so callers can report which
    quantity went bad (e.g. a predictive covariance collapsing to singular).
    """


class ImproperProductError(NumericError):
    """Raised when a quadratic-times-Gaussian product has indefinite precision."""


def set_global_jitter(value):
    """Set the diagonal jitter added before every Cholesky factorization.

    Args:
        value: Non-negative float. Zero (the default) disables jitter.

    Returns:
        The previous jitter value, so callers can restore it.
    """
    global _GLOBAL_JITTER
    if value < 0:
        raise InputError("jitter must be non-negative")
    previous = _GLOBAL_JITTER
    _GLOBAL_JITTER = float(value)
    return previous


def _as_vector(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1:
        raise InputError(f"{name} must be a vector, got shape {x.shape}")
    return x


def _as_matrix(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    if x.ndim != 2:
        raise InputError(f"{name} must be a matrix, got shape {x.shape}")
    return x


def _symmetrize(mat, name):
    """Check symmetry to relative tolerance, then return the symmetric part."""
    gap = np.max(np.abs(mat - mat.T)) if mat.size else 0.0
    scale = max(1.0, np.max(np.abs(mat))) if mat.size else 1.0
    if gap > _SYM_RTOL * scale:
        raise InputError(f"{name} is not symmetric (max asymmetry {gap:.3e})")
    return 0.5 * (mat + mat.T)


def _chol(mat, name):
    """Cholesky-factor a symmetric matrix, with the optional global jitter."""
    if _GLOBAL_JITTER > 0.0:
        mat = mat + _GLOBAL_JITTER * np.eye(mat.shape[0])
    try:
        return cho_factor(mat, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"{name} is not positive definite: {exc}") from exc


def _logdet_from_chol(factor):
    return 2.0 * np.sum(np.log(np.diag(factor[0])))


@dataclass(frozen=True)
class GaussianDensity:
    """Multivariate normal N(mean, cov) in moment form.

    Attributes:
        mean: length-d vector.
        cov: d x d symmetric positive definite covariance.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean, "mean")
        cov = _symmetrize(_as_matrix(self.cov, "cov"), "GaussianDensity.cov")
        if cov.shape[0] != mean.shape[0]:
            raise InputError(
                f"cov shape {cov.shape} does not match mean dimension {mean.shape[0]}"
            )
        _chol(cov, "GaussianDensity.cov")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class AffineGaussianKernel:
    """Conditional density k(y | x) = N(y; slope @ x + offset, cov).

    Attributes:
        slope: d_out x d_in matrix.
        offset: length-d_out vector.
        cov: d_out x d_out symmetric positive definite covariance.
    """

    slope: np.ndarray
    offset: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        slope = _as_matrix(self.slope, "slope")
        offset = _as_vector(self.offset, "offset")
        cov = _symmetrize(_as_matrix(self.cov, "cov"), "AffineGaussianKernel.cov")
        if slope.shape[0] != offset.shape[0] or cov.shape[0] != offset.shape[0]:
            raise InputError(
                "inconsistent kernel shapes: slope "
                f"{slope.shape}, offset {offset.shape}, cov {cov.shape}"
            )
        _chol(cov, "AffineGaussianKernel.cov")
        for arr in (slope, offset, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "slope", slope)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "cov", cov)

    @property
    def dim_in(self):
        return self.slope.shape[1]

    @property
    def dim_out(self):
        return self.slope.shape[0]

    def condition_on(self, x):
        """Return the Gaussian over outputs for a fixed input point x."""
        x = _as_vector(x, "x")
        if x.shape[0] != self.dim_in:
            raise InputError(f"x has dimension {x.shape[0]}, expected {self.dim_in}")
        return GaussianDensity(self.slope @ x + self.offset, self.cov)

    def log_pdf(self, y, x):
        """Evaluate log k(y | x)."""
        return log_pdf(self.condition_on(x), y)


@dataclass(frozen=True)
class Categorical:
    """Probability vector over regimes {1..M} (stored 0-based).

    Attributes:
        probs: length-M vector, entries >= 0, summing to 1 within 1e-12.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = _as_vector(self.probs, "probs")
        if probs.size == 0:
            raise InputError("Categorical needs at least one entry")
        if np.any(probs < 0):
            raise InputError("Categorical entries must be non-negative")
        if abs(probs.sum() - 1.0) > _PROB_TOL:
            raise InputError(
                f"Categorical entries sum to {probs.sum():.15f}, expected 1"
            )
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def size(self):
        return self.probs.shape[0]

    @staticmethod
    def from_log_weights(log_weights):
        """Normalize unnormalized log-weights into a Categorical.

        Normalization happens in the log domain via log-sum-exp, so inputs
        may be arbitrarily scaled. Entries may be -inf (zero probability)
        but not all of them.

        Returns:
            (categorical, log_norm) where log_norm = logsumexp(log_weights).
        """
        log_weights = _as_vector(log_weights, "log_weights")
        log_norm = logsumexp(log_weights)
        if not np.isfinite(log_norm):
            raise NumericError("log-weight normalization is not finite")
        probs = np.exp(log_weights - log_norm)
        total = probs.sum()
        return Categorical(probs / total), float(log_norm)


@dataclass(frozen=True)
class CategoricalKernel:
    """Column-stochastic regime transition matrix.

    Entry (i, j) is the probability of destination regime i given source
    regime j, so ``matrix @ f.probs`` marginalizes a source distribution
    forward. Each column must be a valid Categorical.
    """

    matrix: np.ndarray

    def __post_init__(self):
        matrix = _as_matrix(self.matrix, "matrix")
        if matrix.shape[0] != matrix.shape[1]:
            raise InputError(f"kernel matrix must be square, got {matrix.shape}")
        if np.any(matrix < 0):
            raise InputError("kernel entries must be non-negative")
        col_sums = matrix.sum(axis=0)
        if np.any(np.abs(col_sums - 1.0) > _PROB_TOL):
            raise InputError(
                f"kernel columns must sum to 1, got sums {col_sums}"
            )
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def size(self):
        return self.matrix.shape[0]

    def apply(self, f):
        """Push a source Categorical through the kernel (marginalize)."""
        if f.size != self.size:
            raise InputError("size mismatch between kernel and categorical")
        probs = self.matrix @ f.probs
        return Categorical(probs / probs.sum())


@dataclass(frozen=True)
class LogQuadraticForm:
    """The function x -> constant + linear @ x - 0.5 * x @ precision @ x.

    The precision must be symmetric but may have any signature, so this type
    covers improper (unnormalizable) log-densities as used by backward value
    functions and information-form likelihood messages.
    """

    precision: np.ndarray
    linear: np.ndarray
    constant: float

    def __post_init__(self):
        precision = _symmetrize(
            _as_matrix(self.precision, "precision"), "LogQuadraticForm.precision"
        )
        linear = _as_vector(self.linear, "linear")
        if precision.shape[0] != linear.shape[0]:
            raise InputError(
                f"precision shape {precision.shape} does not match "
                f"linear dimension {linear.shape[0]}"
            )
        precision.setflags(write=False)
        linear.setflags(write=False)
        object.__setattr__(self, "precision", precision)
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "constant", float(self.constant))

    @property
    def dim(self):
        return self.linear.shape[0]

    def __call__(self, x):
        x = _as_vector(x, "x")
        return self.constant + self.linear @ x - 0.5 * x @ self.precision @ x

    @staticmethod
    def zero(dim):
        return LogQuadraticForm(np.zeros((dim, dim)), np.zeros(dim), 0.0)

    @staticmethod
    def from_gaussian(g):
        """Rewrite log N(x; g.mean, g.cov) as an explicit quadratic in x."""
        factor = _chol(g.cov, "GaussianDensity.cov")
        precision = cho_solve(factor, np.eye(g.dim))
        precision = 0.5 * (precision + precision.T)
        linear = cho_solve(factor, g.mean)
        constant = -0.5 * (
            g.mean @ linear + g.dim * LOG_2PI + _logdet_from_chol(factor)
        )
        return LogQuadraticForm(precision, linear, constant)

    def __add__(self, other):
        if not isinstance(other, LogQuadraticForm):
            return NotImplemented
        return LogQuadraticForm(
            self.precision + other.precision,
            self.linear + other.linear,
            self.constant + other.constant,
        )

    def shift_constant(self, delta):
        return LogQuadraticForm(self.precision, self.linear, self.constant + delta)


def log_pdf(g, x):
    """Evaluate log N(x; g.mean, g.cov) via Cholesky (no explicit inverse).

    Args:
        g: GaussianDensity.
        x: point of evaluation, length g.dim.

    Returns:
        float log-density.
    """
    x = _as_vector(x, "x")
    if x.shape[0] != g.dim:
        raise InputError(f"x has dimension {x.shape[0]}, expected {g.dim}")
    factor = _chol(g.cov, "GaussianDensity.cov")
    residual = x - g.mean
    maha = residual @ cho_solve(factor, residual)
    return float(-0.5 * (g.dim * LOG_2PI + _logdet_from_chol(factor) + maha))


def predict_and_reverse(prior, kernel):
    """Factor kernel(x'|x) * prior(x) into predictive(x') * reverse(x|x').

    This is exact Gaussian marginalization plus conditioning: the joint of
    (x, x') is Gaussian, so the predictive is N(A m + b, A P A^T + Q) and the
    reverse conditional is affine-Gaussian with the usual gain form. The two
    factorizations describe the same joint, which is the identity tested by
    the acceptance suite.

    Args:
        prior: GaussianDensity over the input x.
        kernel: AffineGaussianKernel from x to x'.

    Returns:
        (predictive, reverse): GaussianDensity over x' and the exact
        AffineGaussianKernel of x given x'.
    """
    if kernel.dim_in != prior.dim:
        raise InputError(
            f"kernel input dimension {kernel.dim_in} does not match prior {prior.dim}"
        )
    pred_mean = kernel.slope @ prior.mean + kernel.offset
    pred_cov = kernel.slope @ prior.cov @ kernel.slope.T + kernel.cov
    pred_cov = 0.5 * (pred_cov + pred_cov.T)
    predictive = GaussianDensity(pred_mean, pred_cov)

    factor = _chol(pred_cov, "predictive covariance")
    # gain = P A^T (A P A^T + Q)^{-1}, computed as a solve against the factor
    cross = prior.cov @ kernel.slope.T
    gain = cho_solve(factor, cross.T).T
    rev_cov = prior.cov - gain @ pred_cov @ gain.T
    rev_cov = 0.5 * (rev_cov + rev_cov.T)
    reverse = AffineGaussianKernel(gain, prior.mean - gain @ pred_mean, rev_cov)
    return predictive, reverse


def neg_relative_entropy(g_star, g):
    """Negative relative entropy -KL(g || g_star) between Gaussians.

    Evaluates the closed form
        -1/2 [ tr(S*^-1 S) - d + (m*-m)^T S*^-1 (m*-m) + log|S*| - log|S| ],
    which is the expectation of log(g_star/g) under g. Always <= 0 with
    equality iff the two densities coincide.

    Args:
        g_star: GaussianDensity appearing inside the logarithm.
        g: GaussianDensity the expectation is taken under.

    Returns:
        float, the negative relative entropy.
    """
    if g_star.dim != g.dim:
        raise InputError(f"dimension mismatch: {g_star.dim} vs {g.dim}")
    d = g.dim
    factor_star = _chol(g_star.cov, "g_star.cov")
    factor_g = _chol(g.cov, "g.cov")
    trace = np.trace(cho_solve(factor_star, g.cov))
    diff = g_star.mean - g.mean
    maha = diff @ cho_solve(factor_star, diff)
    logdet_gap = _logdet_from_chol(factor_star) - _logdet_from_chol(factor_g)
    return float(-0.5 * (trace - d + maha + logdet_gap))


def average_log_gaussians(components, weights):
    """Exponentiate a weighted average of log-Gaussian densities.

    The weighted sum of log-densities is itself quadratic, so
        sum_z weights(z) * log g_z(x) = log(zeta * gbar(x))
    for a Gaussian gbar with precision-averaged parameters and a constant
    zeta <= 1. Returns log zeta (the density-scale constant would underflow).

    Args:
        components: non-empty list of GaussianDensity of equal dimension.
        weights: Categorical with one entry per component.

    Returns:
        (log_zeta, gbar): the constant and the averaged GaussianDensity.
    """
    if len(components) == 0:
        raise InputError("average_log_gaussians needs at least one component")
    if weights.size != len(components):
        raise InputError(
            f"{len(components)} components but {weights.size} weights"
        )
    d = components[0].dim
    if any(c.dim != d for c in components):
        raise InputError("components must share dimension")

    avg_precision = np.zeros((d, d))
    avg_lin = np.zeros(d)
    weighted_logdets = 0.0
    weighted_maha = 0.0
    for comp, w in zip(components, weights.probs):
        factor = _chol(comp.cov, "component covariance")
        precision = cho_solve(factor, np.eye(d))
        lin = cho_solve(factor, comp.mean)
        avg_precision += w * precision
        avg_lin += w * lin
        weighted_logdets += w * _logdet_from_chol(factor)
        weighted_maha += w * (comp.mean @ lin)
    avg_precision = 0.5 * (avg_precision + avg_precision.T)

    factor_bar = _chol(avg_precision, "aggregate precision")
    mean_bar = cho_solve(factor_bar, avg_lin)
    cov_bar = cho_solve(factor_bar, np.eye(d))
    gbar = GaussianDensity(mean_bar, 0.5 * (cov_bar + cov_bar.T))

    # log zeta = sum_z w log g_z(x) - log gbar(x), constant in x
    logdet_bar = -_logdet_from_chol(factor_bar)
    log_zeta = -0.5 * (
        weighted_logdets - logdet_bar + weighted_maha - mean_bar @ avg_lin
    )
    return float(log_zeta), gbar


def conditional_relative_entropy_likelihood(k1, k2):
    """Integrate log(k2/k1) against k1, as a likelihood in the shared input.

    For affine-Gaussian kernels k1(y|x) = N(y; A1 x + b1, Q1) and
    k2(y|x) = N(y; A2 x + b2, Q2) the integral of log(k2/k1) under k1(.|x)
    is, as a function of x, a scaled Gaussian likelihood:
        integral(x) = log_c + log N(y; H x, S)
    with y = b2 - b1, H = A1 - A2, S = Q2 and
        log_c = -1/2 [ tr(Q2^-1 Q1) - d (1 + log 2 pi) - log|Q1| ].

    Args:
        k1: AffineGaussianKernel the expectation is taken under.
        k2: AffineGaussianKernel inside the logarithm.

    Returns:
        (log_c, y, H, S) such that x -> log_c + log N(y; H x, S) equals the
        integral for every x.
    """
    if k1.dim_in != k2.dim_in or k1.dim_out != k2.dim_out:
        raise InputError(
            f"kernel shape mismatch: ({k1.dim_out},{k1.dim_in}) vs "
            f"({k2.dim_out},{k2.dim_in})"
        )
    d = k1.dim_out
    factor2 = _chol(k2.cov, "k2.cov")
    factor1 = _chol(k1.cov, "k1.cov")
    trace = np.trace(cho_solve(factor2, k1.cov))
    log_c = -0.5 * (trace - d * (1.0 + LOG_2PI) - _logdet_from_chol(factor1))
    y = k2.offset - k1.offset
    H = k1.slope - k2.slope
    S = k2.cov
    return float(log_c), y, H, S


def observation_log_quadratic(kernel, y):
    """Rewrite x -> log k(y | x) as an explicit quadratic in the input x.

    For k(y|x) = N(y; C x + d, R) this is the information-form likelihood
    message with precision C^T R^-1 C (possibly rank deficient, which is why
    the result is a LogQuadraticForm rather than a density).

    Args:
        kernel: AffineGaussianKernel from the latent x to the observation y.
        y: observed vector, length kernel.dim_out.

    Returns:
        LogQuadraticForm in x equal to log k(y | x) pointwise.
    """
    y = _as_vector(y, "y")
    if y.shape[0] != kernel.dim_out:
        raise InputError(
            f"observation has dimension {y.shape[0]}, expected {kernel.dim_out}"
        )
    factor = _chol(kernel.cov, "observation covariance")
    residual = y - kernel.offset
    solved_slope = cho_solve(factor, kernel.slope)
    precision = kernel.slope.T @ solved_slope
    linear = solved_slope.T @ residual
    constant = -0.5 * (
        residual @ cho_solve(factor, residual)
        + kernel.dim_out * LOG_2PI
        + _logdet_from_chol(factor)
    )
    return LogQuadraticForm(0.5 * (precision + precision.T), linear, constant)


def log_integral_quadratic(kernel, lq):
    """Marginalize exp(lq) through an affine-Gaussian kernel, in log form.

    Computes the quadratic q with
        exp(q(x)) = integral of exp(lq(y)) k(y | x) dy
    for k(y|x) = N(y; A x + b, Q). Requires Q^-1 + lq.precision to be
    positive definite (the integral diverges otherwise). This is the
    propagation step of backward (information-form) recursions.

    Args:
        kernel: AffineGaussianKernel from x to y.
        lq: LogQuadraticForm over the output y.

    Returns:
        LogQuadraticForm over the input x.
    """
    if lq.dim != kernel.dim_out:
        raise InputError(
            f"quadratic dimension {lq.dim} does not match kernel output "
            f"{kernel.dim_out}"
        )
    d = kernel.dim_out
    factor_q = _chol(kernel.cov, "kernel covariance")
    lam = cho_solve(factor_q, np.eye(d))
    lam = 0.5 * (lam + lam.T)
    combined = lam + lq.precision
    combined = 0.5 * (combined + combined.T)
    try:
        factor_c = cho_factor(combined, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"divergent marginalization: kernel precision plus quadratic is "
            f"not positive definite ({exc})"
        ) from exc
    sigma_c = cho_solve(factor_c, np.eye(d))
    sigma_c = 0.5 * (sigma_c + sigma_c.T)

    # collect the result as a quadratic in mu = A x + b, then substitute
    shrink = lam - lam @ sigma_c @ lam            # quadratic coefficient in mu
    shrink = 0.5 * (shrink + shrink.T)
    lin_mu = lam @ sigma_c @ lq.linear            # linear coefficient in mu
    const = (
        lq.constant
        + 0.5 * (lq.linear @ sigma_c @ lq.linear)
        - 0.5 * (_logdet_from_chol(factor_c) + _logdet_from_chol(factor_q))
    )
    a, b = kernel.slope, kernel.offset
    precision_x = a.T @ shrink @ a
    linear_x = a.T @ (lin_mu - shrink @ b)
    constant_x = const + b @ lin_mu - 0.5 * (b @ shrink @ b)
    return LogQuadraticForm(
        0.5 * (precision_x + precision_x.T), linear_x, constant_x
    )


def quadratic_times_gaussian(lq, g):
    """Absorb a log-quadratic factor into a Gaussian (conjugate update).

    Computes log_norm and posterior with
        exp(lq(x)) * N(x; g) = exp(log_norm) * N(x; posterior)
    pointwise in x. This is Bayes' rule whenever lq is a log-likelihood.

    Args:
        lq: LogQuadraticForm in x.
        g: GaussianDensity prior over x.

    Returns:
        (log_norm, posterior).

    Raises:
        ImproperProductError: if the combined precision is not positive
            definite (the product cannot be renormalized into a Gaussian).
    """
    if lq.dim != g.dim:
        raise InputError(f"dimension mismatch: {lq.dim} vs {g.dim}")
    factor_g = _chol(g.cov, "GaussianDensity.cov")
    prior_precision = cho_solve(factor_g, np.eye(g.dim))
    prior_lin = cho_solve(factor_g, g.mean)
    combined_precision = 0.5 * (prior_precision + prior_precision.T) + lq.precision
    combined_precision = 0.5 * (combined_precision + combined_precision.T)
    try:
        factor_c = cho_factor(combined_precision, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ImproperProductError(
            f"improper product: combined precision is not positive definite ({exc})"
        ) from exc

    combined_lin = prior_lin + lq.linear
    mean = cho_solve(factor_c, combined_lin)
    cov = cho_solve(factor_c, np.eye(g.dim))
    posterior = GaussianDensity(mean, 0.5 * (cov + cov.T))

    # log-norm from matching constants of both sides at the posterior mode
    log_norm = (
        lq.constant
        - 0.5 * (g.mean @ prior_lin)
        + 0.5 * (mean @ combined_lin)
        - 0.5 * _logdet_from_chol(factor_g)
        - 0.5 * _logdet_from_chol(factor_c)
    )
    return float(log_norm), posterior
