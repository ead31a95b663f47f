"""Variational value-functional recursions on the linear-Gaussian family.

The family here contains the true posterior, so every variational object has
an exact counterpart in :mod:`jumpgauss.exact`: the backward representer is
the future-data likelihood, the forward representer is the unnormalized
filtering density, and the fixed-point smoother lands on the RTS posterior in
one sweep. That makes this module the equality-testable instantiation of the
machinery the jump-system solver uses with genuine slack.

The sweeps accept a sequence of candidate posterior marginals because the
general recursions weight their kernel updates by those marginals. For the
affine-Gaussian family the weighted kernel optimum coincides with the exact
pointwise conditional regardless of the weights, so the output does not
depend on the marginals argument; tests exploit this to check that wrong
marginals still produce valid lower bounds.

Representer updates are computed in expectation form (an expectation of a
joint log-quadratic under the chosen kernel, plus the kernel's entropy), so
they stay valid lower-bound updates for any admissible kernel rather than
assuming the tight closed form.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from jumpgauss.exact import LinearGaussianSystem, _check_observations
from jumpgauss.gaussians import (
    AffineGaussianKernel,
    GaussianDensity,
    InputError,
    LogQuadraticForm,
    NumericError,
    log_pdf,
    observation_log_quadratic,
    predict_and_reverse,
    quadratic_times_gaussian,
)

_CONSISTENCY_TOL = 1e-8


def normalize_quadratic(lq):
    """Normalize exp(lq) into a Gaussian density and its log-integral.

    Args:
        lq: LogQuadraticForm with positive definite precision.

    Returns:
        (log_norm, GaussianDensity) with
        exp(lq(x)) = exp(log_norm) * N(x; density) pointwise.

    Raises:
        NumericError: if the precision is not positive definite (the
            exponentiated form is improper and has no Gaussian normalization).
    """
    try:
        factor = cho_factor(lq.precision, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"improper representer: precision is not positive definite ({exc})"
        ) from exc
    mean = cho_solve(factor, lq.linear)
    cov = cho_solve(factor, np.eye(lq.dim))
    density = GaussianDensity(mean, 0.5 * (cov + cov.T))
    logdet_precision = 2.0 * np.sum(np.log(np.diag(factor[0])))
    log_norm = (
        lq.constant
        + 0.5 * (mean @ lq.linear)
        + 0.5 * (lq.dim * np.log(2 * np.pi) - logdet_precision)
    )
    return float(log_norm), density


def transition_joint_quadratic(kernel, output_first):
    """Write log k(x_out | x_in) as a joint quadratic over stacked variables.

    Args:
        kernel: AffineGaussianKernel with square slope (state transition).
        output_first: if True the stacked variable is (x_out, x_in),
            otherwise (x_in, x_out).

    Returns:
        LogQuadraticForm over the stacked 2d-dimensional variable.
    """
    d = kernel.dim_in
    if kernel.dim_out != d:
        raise InputError("transition kernel must be square")
    factor = cho_factor(kernel.cov, lower=True)
    lam = cho_solve(factor, np.eye(d))
    lam = 0.5 * (lam + lam.T)
    lam_a = lam @ kernel.slope
    a_lam_a = kernel.slope.T @ lam_a
    precision = np.zeros((2 * d, 2 * d))
    linear = np.zeros(2 * d)
    lam_b = lam @ kernel.offset
    if output_first:
        out, inp = slice(0, d), slice(d, 2 * d)
    else:
        out, inp = slice(d, 2 * d), slice(0, d)
    precision[out, out] = lam
    precision[inp, inp] = a_lam_a
    precision[out, inp] = -lam_a
    precision[inp, out] = -lam_a.T
    linear[out] = lam_b
    linear[inp] = -kernel.slope.T @ lam_b
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    constant = -0.5 * (
        kernel.offset @ lam_b + d * np.log(2 * np.pi) + logdet
    )
    return LogQuadraticForm(precision, linear, constant)


def lift_quadratic(lq, total_dim, offset):
    """Embed a quadratic on a block of variables into a larger stacked one."""
    d = lq.dim
    precision = np.zeros((total_dim, total_dim))
    linear = np.zeros(total_dim)
    precision[offset : offset + d, offset : offset + d] = lq.precision
    linear[offset : offset + d] = lq.linear
    return LogQuadraticForm(precision, linear, lq.constant)


def expected_update(joint, kernel):
    """Expectation of a stacked quadratic under a kernel, plus its entropy.

    The stacked variable is (integrated, kept) with the integrated block
    first. For a kernel k(integrated | kept) this returns the quadratic
        x -> E_{k(. | x)}[ joint(y, x) - log k(y | x) ],
    which is the generic representer update for an arbitrary admissible
    kernel choice (it never exceeds log of the integral, with equality when
    the kernel is the exact conditional).

    Args:
        joint: LogQuadraticForm over the stacked (d_out + d_in) variable.
        kernel: AffineGaussianKernel from the kept to the integrated block.

    Returns:
        LogQuadraticForm over the kept block.
    """
    d_int = kernel.dim_out
    d_keep = kernel.dim_in
    if joint.dim != d_int + d_keep:
        raise InputError(
            f"stacked quadratic has dimension {joint.dim}, expected "
            f"{d_int + d_keep}"
        )
    j_ii = joint.precision[:d_int, :d_int]
    j_ik = joint.precision[:d_int, d_int:]
    j_kk = joint.precision[d_int:, d_int:]
    lin_i = joint.linear[:d_int]
    lin_k = joint.linear[d_int:]
    g, u, omega = kernel.slope, kernel.offset, kernel.cov

    precision = g.T @ j_ii @ g + g.T @ j_ik + j_ik.T @ g + j_kk
    linear = g.T @ (lin_i - j_ii @ u) + lin_k - j_ik.T @ u
    constant = (
        joint.constant
        + lin_i @ u
        - 0.5 * (u @ j_ii @ u + np.sum(j_ii * omega))
    )
    # entropy of the kernel (constant in the kept variable)
    sign, logdet = np.linalg.slogdet(omega)
    if sign <= 0:
        raise NumericError("kernel covariance lost positive definiteness")
    constant += 0.5 * (d_int * (1.0 + np.log(2 * np.pi)) + logdet)
    return LogQuadraticForm(
        0.5 * (precision + precision.T), linear, constant
    )


@dataclass(frozen=True)
class RepresenterSequence:
    """Per-time value-function representers in log-quadratic form.

    Attributes:
        forward: log of the running unnormalized-posterior lower bound at
            each t (None if only the backward sweep ran).
        predictive: the forward representers before the time-t observation
            is absorbed (same length as forward, entry 0 unused/None).
        backward: log of the future-data likelihood lower bound at each t
            (None if only the forward sweep ran). The terminal entry is the
            zero form.
    """

    forward: tuple = None
    predictive: tuple = None
    backward: tuple = None

    def __post_init__(self):
        if self.forward is not None:
            object.__setattr__(self, "forward", tuple(self.forward))
        if self.predictive is not None:
            object.__setattr__(self, "predictive", tuple(self.predictive))
        if self.backward is not None:
            backward = tuple(self.backward)
            last = backward[-1]
            if (
                np.any(last.precision != 0.0)
                or np.any(last.linear != 0.0)
                or last.constant != 0.0
            ):
                raise InputError("terminal backward representer must be zero")
            object.__setattr__(self, "backward", backward)


@dataclass(frozen=True)
class GaussMarkovPosterior:
    """A Gauss-Markov posterior in both factorizations.

    Holds per-time marginals together with forward kernels q(x_t | x_{t-1})
    and reverse kernels q(x_{t-1} | x_t). Construction validates that the
    two factorizations describe one joint: pushing marginals through either
    kernel family reproduces the adjacent marginal, and the two pair
    densities agree pointwise at probe points.
    """

    marginals: tuple
    forward_kernels: tuple
    reverse_kernels: tuple

    def __post_init__(self):
        marginals = tuple(self.marginals)
        forward = tuple(self.forward_kernels)
        reverse = tuple(self.reverse_kernels)
        n = len(marginals)
        if len(forward) != n - 1 or len(reverse) != n - 1:
            raise InputError("kernel sequences must have length T")
        for t in range(1, n):
            q_prev, q_t = marginals[t - 1], marginals[t]
            fwd, rev = forward[t - 1], reverse[t - 1]
            pushed_mean = fwd.slope @ q_prev.mean + fwd.offset
            pushed_cov = fwd.slope @ q_prev.cov @ fwd.slope.T + fwd.cov
            if not (
                np.allclose(pushed_mean, q_t.mean, atol=_CONSISTENCY_TOL)
                and np.allclose(pushed_cov, q_t.cov, atol=_CONSISTENCY_TOL)
            ):
                raise InputError(
                    f"forward-marginal consistency fails at time {t}"
                )
            back_mean = rev.slope @ q_t.mean + rev.offset
            back_cov = rev.slope @ q_t.cov @ rev.slope.T + rev.cov
            if not (
                np.allclose(back_mean, q_prev.mean, atol=_CONSISTENCY_TOL)
                and np.allclose(back_cov, q_prev.cov, atol=_CONSISTENCY_TOL)
            ):
                raise InputError(
                    f"reverse-marginal consistency fails at time {t}"
                )
            # both factorizations must give the same pair density
            scale = np.sqrt(np.diag(q_prev.cov))
            for direction in (-1.0, 0.0, 1.0):
                x_prev = q_prev.mean + direction * scale
                x_t = q_t.mean + direction * np.sqrt(np.diag(q_t.cov))
                lhs = log_pdf(q_prev, x_prev) + fwd.log_pdf(x_t, x_prev)
                rhs = log_pdf(q_t, x_t) + rev.log_pdf(x_prev, x_t)
                if abs(lhs - rhs) > _CONSISTENCY_TOL:
                    raise InputError(
                        f"factorization consistency fails at time {t}"
                    )
        object.__setattr__(self, "marginals", marginals)
        object.__setattr__(self, "forward_kernels", forward)
        object.__setattr__(self, "reverse_kernels", reverse)

    @property
    def horizon(self):
        return len(self.marginals) - 1


def _initial_representer(sys, y0):
    prior = LogQuadraticForm.from_gaussian(sys.init)
    return prior + observation_log_quadratic(sys.observations[0], y0)


def forward_representer_sweep(sys, y, marginals):
    """One forward value sweep: reverse kernels plus running representers.

    For each t the reverse kernel is the optimizer of the kernel update
    weighted by ``marginals[t]``; in this family that is the exact
    conditional of x_{t-1} given x_t under (normalized representer) x
    (transition), so the result does not depend on the marginals argument.
    The representers are then advanced in expectation form.

    Args:
        sys: LinearGaussianSystem.
        y: observations, length horizon+1.
        marginals: candidate posterior marginals (validated for length and
            dimension; used as the weighting argument of the kernel update).

    Returns:
        (RepresenterSequence with forward and predictive parts,
        list of reverse AffineGaussianKernel, one per t = 1..T).
    """
    y = _check_observations(
        y, sys.horizon + 1, [k.dim_out for k in sys.observations]
    )
    _check_marginals(sys, marginals)
    rho = [_initial_representer(sys, y[0])]
    rho_pred = [None]
    reverse_kernels = []
    for t in range(1, sys.horizon + 1):
        _, normalized = normalize_quadratic(rho[-1])
        _, rev = predict_and_reverse(normalized, sys.transitions[t - 1])
        reverse_kernels.append(rev)
        joint = lift_quadratic(rho[-1], 2 * sys.dim, 0)
        joint = joint + transition_joint_quadratic(
            sys.transitions[t - 1], output_first=False
        )
        pred = expected_update(joint, rev)
        rho_pred.append(pred)
        rho.append(pred + observation_log_quadratic(sys.observations[t], y[t]))
    return (
        RepresenterSequence(forward=rho, predictive=rho_pred),
        reverse_kernels,
    )


def backward_representer_sweep(sys, y, marginals):
    """One backward value sweep: forward kernels plus future-data bounds.

    Mirror image of the forward sweep. The kernel update at time t selects
    the conditional over x_t given x_{t-1} proportional to (current backward
    representer) x (observation likelihood) x (transition); the representer
    then retreats one step in expectation form.

    Args:
        sys, y, marginals: as in forward_representer_sweep.

    Returns:
        (RepresenterSequence with backward part,
        list of forward AffineGaussianKernel, entry t-1 holding
        q(x_t | x_{t-1})).
    """
    y = _check_observations(
        y, sys.horizon + 1, [k.dim_out for k in sys.observations]
    )
    _check_marginals(sys, marginals)
    d = sys.dim
    betas = [LogQuadraticForm.zero(d)]
    forward_kernels = [None] * sys.horizon
    for t in range(sys.horizon, 0, -1):
        phi = betas[-1] + observation_log_quadratic(sys.observations[t], y[t])
        trans = sys.transitions[t - 1]
        factor_q = cho_factor(trans.cov, lower=True)
        lam = cho_solve(factor_q, np.eye(d))
        combined = 0.5 * (lam + lam.T) + phi.precision
        try:
            factor_c = cho_factor(0.5 * (combined + combined.T), lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericError(
                f"improper kernel update at time {t}: combined precision is "
                f"not positive definite ({exc})"
            ) from exc
        lam_a = cho_solve(factor_q, trans.slope)
        slope = cho_solve(factor_c, lam_a)
        offset = cho_solve(factor_c, cho_solve(factor_q, trans.offset) + phi.linear)
        cov = cho_solve(factor_c, np.eye(d))
        kernel = AffineGaussianKernel(slope, offset, 0.5 * (cov + cov.T))
        forward_kernels[t - 1] = kernel

        joint = lift_quadratic(phi, 2 * d, 0)
        joint = joint + transition_joint_quadratic(trans, output_first=True)
        betas.append(expected_update(joint, kernel))
    betas.reverse()
    return RepresenterSequence(backward=betas), forward_kernels


def initial_density_update(sys, y0, beta0):
    """Terminal step of the backward recursion: the time-0 marginal update.

    Maximizes the bound over the time-0 density; for Gaussians the argmax is
    the normalized product of the backward representer with the time-0
    unnormalized posterior, and the attained maximum is the full-data bound.

    Returns:
        (bound, GaussianDensity).
    """
    return normalize_quadratic(beta0 + _initial_representer(sys, y0))


def variational_two_filter(representers, t):
    """Combine forward and backward representers into a time-t marginal.

    The maximizer of the combined-bound objective over Gaussian marginals is
    the normalized product of the two representers at t.

    Args:
        representers: RepresenterSequence holding both forward and backward
            parts for the same system and data.
        t: time index.

    Returns:
        GaussianDensity.
    """
    if representers.forward is None or representers.backward is None:
        raise InputError("need both forward and backward representers")
    _, density = normalize_quadratic(
        representers.forward[t] + representers.backward[t]
    )
    return density


def _check_marginals(sys, marginals):
    marginals = tuple(marginals)
    if len(marginals) != sys.horizon + 1:
        raise InputError(
            f"expected {sys.horizon + 1} marginals, got {len(marginals)}"
        )
    for g in marginals:
        if g.dim != sys.dim:
            raise InputError("marginal dimension does not match system")
    return marginals


def _backward_marginal_pass(terminal, reverse_kernels):
    marginals = [terminal]
    for rev in reversed(reverse_kernels):
        nxt = marginals[-1]
        mean = rev.slope @ nxt.mean + rev.offset
        cov = rev.slope @ nxt.cov @ rev.slope.T + rev.cov
        marginals.append(GaussianDensity(mean, 0.5 * (cov + cov.T)))
    marginals.reverse()
    return marginals


def fixed_point_smoother(sys, y, init_marginals, iters):
    """Iterate the forward sweep and marginal recomputation to a posterior.

    Each iteration runs a forward representer sweep weighted by the current
    marginals, replaces the terminal marginal with the normalized terminal
    representer, and recomputes all marginals by pushing it backwards
    through the reverse kernels. The recorded bound per iteration is the
    terminal representer's log-normalizer; it is non-decreasing, and in this
    exact family the iteration converges after one pass.

    Args:
        sys: LinearGaussianSystem.
        y: observations.
        init_marginals: starting marginal sequence (e.g. filter marginals).
        iters: number of iterations, >= 1.

    Returns:
        (GaussMarkovPosterior, elbo_trace as a float array of length iters).
    """
    if iters < 1:
        raise InputError("iters must be >= 1")
    marginals = _check_marginals(sys, init_marginals)
    trace = np.empty(iters)
    reverse_kernels = None
    for i in range(iters):
        reps, reverse_kernels = forward_representer_sweep(sys, y, marginals)
        bound, terminal = normalize_quadratic(reps.forward[-1])
        marginals = _backward_marginal_pass(terminal, reverse_kernels)
        trace[i] = bound
    forward_kernels = []
    for t in range(1, sys.horizon + 1):
        _, fwd = predict_and_reverse(marginals[t], reverse_kernels[t - 1])
        forward_kernels.append(fwd)
    posterior = GaussMarkovPosterior(marginals, forward_kernels, reverse_kernels)
    return posterior, trace


def courts_collapse_step(rho_prev, sys, y, t):
    """One filter step with the collapsed (normalizer + density) representer.

    The running representer is approximated by a scalar log-normalizer times
    its normalized density. A step predicts through the transition (for
    t >= 1), absorbs the time-t observation, and re-collapses. In the
    linear-Gaussian family the collapse is lossless, so iterating this from
    (0, prior) reproduces the Kalman filter and its evidence exactly.

    Args:
        rho_prev: (log_normalizer, GaussianDensity) at time t-1 (or the
            prior at t=0).
        sys: LinearGaussianSystem.
        y: full observation sequence.
        t: time index of the observation to absorb.

    Returns:
        (log_normalizer, GaussianDensity) at time t.
    """
    log_norm, density = rho_prev
    if t > 0:
        density, _ = predict_and_reverse(density, sys.transitions[t - 1])
    lq = observation_log_quadratic(sys.observations[t], np.atleast_1d(y[t]))
    increment, posterior = quadratic_times_gaussian(lq, density)
    return log_norm + increment, posterior
