"""Per-step operations for variational inference in jump Gauss-Markov systems.

The variational family factors the path posterior as q(x, z) = f(z) g(x) with
g Gauss-Markov. Everything in this module manipulates the closed form these
factors take after one forward step:

    log (value at time t)(x, z) = log_kappa + log f_star(z) + log g_star(x | z)

together with a shared reverse-time state kernel g_rev(x_{t-1} | x_t) and a
per-regime reverse chain kernel f_rev(z_{t-1} | z_t). The operations here are
the individual blocks (regime prediction, joint mixing, the two entropy-style
likelihood corrections, the value recursion, the marginal fixed point, and the
reverse-kernel fixed point); the drivers module assembles them into filters
and smoothers.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import logsumexp

from jumpgauss.gaussians import (
    LOG_2PI,
    AffineGaussianKernel,
    Categorical,
    CategoricalKernel,
    GaussianDensity,
    InputError,
    LogQuadraticForm,
    NumericError,
    _chol,
    _logdet_from_chol,
    conditional_relative_entropy_likelihood,
    log_pdf,
    neg_relative_entropy,
    observation_log_quadratic,
    average_log_gaussians,
    predict_and_reverse,
    quadratic_times_gaussian,
)

__all__ = [
    "ForwardRepresenter",
    "ProductMarginal",
    "ReverseKernelPair",
    "chain_predict",
    "joint_predict_reverse",
    "mix_joint",
    "zeta_dagger",
    "h_dagger",
    "value_update",
    "filter_update",
    "reverse_kernel_update",
]


def _safe_log(values):
    """Elementwise log that maps exact zeros to -inf without warnings."""
    values = np.asarray(values, dtype=float)
    out = np.full(values.shape, -np.inf)
    positive = values > 0
    out[positive] = np.log(values[positive])
    return out


@dataclass(frozen=True)
class ForwardRepresenter:
    """Forward value function at one time step, in product form.

    Represents the function (x, z) -> log_kappa + log f_star(z)
    + log g_star[z](x), which lower-bounds the unnormalized filtering
    density of the jump system at the same time.

    Attributes:
        log_kappa: accumulated log-normalizer (finite).
        f_star: Categorical over regimes.
        g_star: per-regime tuple of GaussianDensity, one entry per regime.
    """

    log_kappa: float
    f_star: Categorical
    g_star: tuple

    def __post_init__(self):
        g_star = tuple(self.g_star)
        if not np.isfinite(self.log_kappa):
            raise InputError("log_kappa must be finite")
        if len(g_star) != self.f_star.size:
            raise InputError(
                f"{len(g_star)} state components for {self.f_star.size} regimes"
            )
        d = g_star[0].dim
        if any(g.dim != d for g in g_star):
            raise InputError("g_star components must share dimension")
        object.__setattr__(self, "log_kappa", float(self.log_kappa))
        object.__setattr__(self, "g_star", g_star)

    @property
    def n_regimes(self):
        return self.f_star.size

    @property
    def dim(self):
        return self.g_star[0].dim

    def log_value(self, x, z):
        """Evaluate the represented function at a single point (x, z)."""
        weight = self.f_star.probs[z]
        if weight <= 0:
            return -np.inf
        return self.log_kappa + float(np.log(weight)) + log_pdf(self.g_star[z], x)


@dataclass(frozen=True)
class ProductMarginal:
    """Factored time-marginal q_t(x, z) = f(z) g(x)."""

    f: Categorical
    g: GaussianDensity


@dataclass(frozen=True)
class ReverseKernelPair:
    """Reverse-time kernels of the factored posterior at one step.

    The chain part f_rev(z_{t-1} | z_t) is a CategoricalKernel whose columns
    are indexed by z_t. The state part g_rev(x_{t-1} | x_t) is a single
    affine-Gaussian kernel shared by all regimes; the stationarity equations
    admit no regime dependence for it.
    """

    f_rev: CategoricalKernel
    g_rev: AffineGaussianKernel

    def __post_init__(self):
        if self.g_rev.dim_in != self.g_rev.dim_out:
            raise InputError("reverse state kernel must be square")


def chain_predict(f_prev_star, kernel):
    """Factor kernel(z_t|z_{t-1}) f*(z_{t-1}) = f_pred(z_t) f_dagger(z_{t-1}|z_t).

    This is Bayes' rule on the regime chain: f_pred is the one-step regime
    prediction and f_dagger columns are the exact posteriors over the source
    regime given each destination. Destinations with zero predicted mass get
    a uniform column by convention (they carry no joint mass, so any valid
    column preserves the factorization).

    Args:
        f_prev_star: Categorical over the source regime.
        kernel: column-stochastic CategoricalKernel for z_{t-1} -> z_t.

    Returns:
        (f_pred, f_rev_dagger): Categorical over z_t and the CategoricalKernel
        with columns indexed by z_t.
    """
    if f_prev_star.size != kernel.size:
        raise InputError("chain kernel size must match the regime distribution")
    m = kernel.size
    joint = kernel.matrix * f_prev_star.probs[None, :]
    pred = joint.sum(axis=1)
    dagger = np.empty((m, m))
    for i in range(m):
        if pred[i] > 0:
            dagger[:, i] = joint[i, :] / pred[i]
        else:
            dagger[:, i] = 1.0 / m
    dagger /= dagger.sum(axis=0, keepdims=True)
    return Categorical(pred / pred.sum()), CategoricalKernel(dagger)


_SQRT_EPS = float(np.sqrt(np.finfo(float).eps))


def joint_predict_reverse(g_star_prev, state_kernels):
    """Per-regime factorization of transition times previous state component.

    Applies predict_and_reverse regime by regime, producing for every source
    regime z the predictive density over x_t and the exact reverse kernel of
    x_{t-1} given x_t. The reverse covariance is a Schur complement; when the
    transition noise is negligible next to the input covariance the
    subtraction cancels away most significant digits and the downstream
    precision pooling would amplify the garbage, so such regimes are rejected.

    Args:
        g_star_prev: per-regime sequence of GaussianDensity.
        state_kernels: per-regime sequence of AffineGaussianKernel, indexed
            by the source regime.

    Returns:
        Tuple of (predictive, reverse) pairs, one per regime.

    Raises:
        NumericError: if a regime's reverse covariance is numerically
            degenerate relative to the input covariance scale.
    """
    g_star_prev = tuple(g_star_prev)
    state_kernels = tuple(state_kernels)
    if len(g_star_prev) != len(state_kernels):
        raise InputError("need one state kernel per regime component")
    out = []
    for z, (g, k) in enumerate(zip(g_star_prev, state_kernels)):
        pred, rev = predict_and_reverse(g, k)
        scale = np.linalg.eigvalsh(g.cov).max()
        if np.linalg.eigvalsh(rev.cov).min() <= _SQRT_EPS * scale:
            raise NumericError(
                f"reverse covariance of regime {z} is numerically degenerate"
            )
        out.append((pred, rev))
    return tuple(out)


def _mix_joint_weights(g_tilde, weights):
    """Average the per-regime joint log-Gaussians over (x_{t-1}, x_t).

    Stacks each (predictive, reverse) pair into the joint Gaussian it
    factorizes, exponentiates the weighted average of the joint log-densities,
    and re-factors the result into conditional times marginal.

    Args:
        g_tilde: per-regime sequence of (predictive, reverse) pairs.
        weights: Categorical over regimes used in the average.

    Returns:
        (log_eta, g_dagger_rev, g_pred): the averaging constant, the mixed
        reverse kernel of x_{t-1} given x_t, and the mixed predictive density.
    """
    d = g_tilde[0][0].dim
    joints = []
    for pred, rev in g_tilde:
        top = rev.slope @ pred.cov
        cov = np.block([
            [rev.slope @ pred.cov @ rev.slope.T + rev.cov, top],
            [top.T, pred.cov],
        ])
        mean = np.concatenate([rev.slope @ pred.mean + rev.offset, pred.mean])
        joints.append(GaussianDensity(mean, 0.5 * (cov + cov.T)))
    log_eta, avg = average_log_gaussians(joints, weights)

    marg_cov = avg.cov[d:, d:]
    cross = avg.cov[:d, d:]
    factor = _chol(marg_cov, "mixed predictive covariance")
    gain = cho_solve(factor, cross.T).T
    cond_cov = avg.cov[:d, :d] - gain @ marg_cov @ gain.T
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    g_pred = GaussianDensity(avg.mean[d:], 0.5 * (marg_cov + marg_cov.T))
    g_dagger_rev = AffineGaussianKernel(
        gain, avg.mean[:d] - gain @ avg.mean[d:], cond_cov
    )
    return log_eta, g_dagger_rev, g_pred


def mix_joint(g_tilde, f_rev, z_t):
    """Mix the per-regime joint factors under one column of f_rev.

    Weighted (by f_rev(.|z_t)) averaging of the joint log-densities over
    (x_{t-1}, x_t) yields, after re-factoring, a single reverse kernel and
    predictive density plus the constant log_eta absorbed by the average:

        sum_z f_rev(z|z_t) log[pred_z(x_t) rev_z(x_{t-1}|x_t)]
            = log_eta + log g_dagger_rev(x_{t-1}|x_t) + log g_pred(x_t).

    Args:
        g_tilde: per-regime sequence of (predictive, reverse) pairs.
        f_rev: CategoricalKernel over source regimes, columns indexed by z_t.
        z_t: destination regime selecting the weight column.

    Returns:
        (log_eta, g_dagger_rev, g_pred).
    """
    if not 0 <= z_t < f_rev.size:
        raise InputError(f"regime index {z_t} out of range")
    if len(g_tilde) != f_rev.size:
        raise InputError("need one (pred, rev) pair per regime")
    weights = Categorical(f_rev.matrix[:, z_t])
    return _mix_joint_weights(g_tilde, weights)


def zeta_dagger(f_rev, f_rev_dagger):
    """Per-destination negative relative entropy of reverse chain columns.

    For every destination regime z_t this returns
        sum_z f_rev(z|z_t) log[f_dagger(z|z_t) / f_rev(z|z_t)],
    which is <= 0 with equality when the columns coincide. Terms with
    f_rev(z|z_t) = 0 contribute zero; if f_rev puts mass where f_dagger has
    none the entry is -inf, which callers must treat as a structured
    support-collapse flag for that destination.

    Args:
        f_rev: CategoricalKernel, the variational reverse chain kernel.
        f_rev_dagger: CategoricalKernel, the exact Bayes reverse kernel.

    Returns:
        Length-M float array of per-destination values (entries may be -inf).
    """
    if f_rev.size != f_rev_dagger.size:
        raise InputError("reverse kernels must have matching size")
    m = f_rev.size
    out = np.zeros(m)
    for j in range(m):
        col = f_rev.matrix[:, j]
        dag = f_rev_dagger.matrix[:, j]
        support = col > 0
        if np.any(dag[support] <= 0):
            out[j] = -np.inf
            continue
        out[j] = float(
            np.sum(col[support] * (np.log(dag[support]) - np.log(col[support])))
        )
    return out


def h_dagger(g_dagger_rev, g_rev):
    """Expected log-ratio of the mixed to the shared reverse state kernel.

    Integrating log(g_dagger_rev / g_rev) against g_rev gives, as a function
    of the conditioning point x_t, a constant plus a Gaussian correction term:

        log_eta_dagger + log_c + log N(y; H x_t, S).

    The split is normalized so the correction term (log_c plus the Gaussian
    log-density) is identically zero when the two kernels coincide:
    log_c = +0.5 log|2 pi S| cancels the density's own normalizer at zero
    residual, and log_eta_dagger absorbs the rest of the constant. H is
    oriented as (dagger slope - current slope); negating both y and H leaves
    the value unchanged, so this is the same function the closed form
    produces.

    Args:
        g_dagger_rev: AffineGaussianKernel inside the logarithm.
        g_rev: AffineGaussianKernel the expectation is taken under.

    Returns:
        (log_eta_dagger, (log_c, y, H, S)).
    """
    total_c, y, big_h, big_s = conditional_relative_entropy_likelihood(
        g_rev, g_dagger_rev
    )
    d = big_s.shape[0]
    chol_s = _chol(big_s, "h_dagger covariance")
    half_log_norm = 0.5 * (d * LOG_2PI + _logdet_from_chol(chol_s))
    return total_c - half_log_norm, (half_log_norm, -y, -big_h, big_s)


def value_update(prev, sys, y_t, rev, t):
    """Advance the forward value function one step under fixed reverse kernels.

    Runs the closed-form recursion: regime prediction, per-regime joint
    factorization, mixing under the reverse chain columns, the two correction
    likelihoods, and a conjugate combination of the mixed predictive with the
    actual observation likelihood and the state correction. The per-regime
    weights (in logs) are

        log w(z_t) = log hbar + log eta_dagger + log zeta_dagger
                     + log eta + log f_pred,

    the increment to log_kappa is their log-sum-exp, and f_star the
    normalized weights.

    Args:
        prev: ForwardRepresenter at time t-1.
        sys: JumpGMSystem.
        y_t: observation at time t.
        rev: ReverseKernelPair for the step t-1 <- t.
        t: time index, used only in error messages.

    Returns:
        ForwardRepresenter at time t.

    Raises:
        NumericError: if every regime weight collapses to -inf.
    """
    m = sys.n_regimes
    if prev.n_regimes != m:
        raise InputError("representer regime count must match the system")
    f_pred, f_dag = chain_predict(prev.f_star, sys.chain_kernel)
    g_tilde = joint_predict_reverse(prev.g_star, sys.state_kernels)
    log_zeta_dag = zeta_dagger(rev.f_rev, f_dag)
    log_f_pred = _safe_log(f_pred.probs)

    log_w = np.empty(m)
    g_star = []
    for j in range(m):
        log_eta, g_dag_rev, g_pred = mix_joint(g_tilde, rev.f_rev, j)
        log_eta_dag, (log_c_h, y_h, big_h, big_s) = h_dagger(g_dag_rev, rev.g_rev)
        lq = observation_log_quadratic(sys.obs_kernels[j], y_t)
        h_lq = observation_log_quadratic(
            AffineGaussianKernel(big_h, np.zeros(sys.dim), big_s), y_h
        )
        lq = lq + LogQuadraticForm(h_lq.precision, h_lq.linear, h_lq.constant + log_c_h)
        log_hbar, g_star_j = quadratic_times_gaussian(lq, g_pred)
        g_star.append(g_star_j)
        log_w[j] = (
            log_hbar + log_eta_dag + log_zeta_dag[j] + log_eta + log_f_pred[j]
        )
    increment = logsumexp(log_w)
    if not np.isfinite(increment):
        raise NumericError(f"value update at time {t}: no regime retains mass")
    f_star = Categorical(np.exp(log_w - increment) / np.exp(log_w - increment).sum())
    return ForwardRepresenter(prev.log_kappa + increment, f_star, tuple(g_star))


def filter_update(rep, max_iters, tol):
    """Fixed-point marginal update: f from xi-weighted f_star, g by pooling.

    Alternates the two closed-form stationarity equations: given f, the state
    marginal g is the precision-weighted average of the g_star components;
    given g, f is proportional to xi * f_star where log xi(z) is the negative
    relative entropy of g from g_star[z]. Each half-step maximizes the same
    objective, so the reported bound is non-decreasing over iterations.

    Args:
        rep: ForwardRepresenter at the current time.
        max_iters: maximum number of alternations (>= 1).
        tol: absolute tolerance on the bound change (> 0).

    Returns:
        (marginal, bound, converged): the ProductMarginal, the evidence lower
        bound log_kappa + logsumexp(log xi + log f_star), and a flag that is
        False when max_iters was exhausted before the bound stabilized.
    """
    if max_iters < 1:
        raise InputError("max_iters must be >= 1")
    if tol <= 0:
        raise InputError("tol must be > 0")
    log_f_star = _safe_log(rep.f_star.probs)
    f = rep.f_star.probs.copy()
    prev_bound = None
    converged = False
    bound = -np.inf
    g = None
    for _ in range(max_iters):
        _, g = average_log_gaussians(rep.g_star, Categorical(f))
        log_xi = np.array(
            [neg_relative_entropy(component, g) for component in rep.g_star]
        )
        log_wf = log_f_star + log_xi
        log_norm = logsumexp(log_wf)
        bound = rep.log_kappa + log_norm
        f = np.exp(log_wf - log_norm)
        f = f / f.sum()
        if prev_bound is not None and abs(bound - prev_bound) < tol:
            converged = True
            break
        prev_bound = bound
    return ProductMarginal(Categorical(f), g), float(bound), converged


def reverse_kernel_update(g_tilde, f_rev_dagger, marginal, current):
    """One pass of the reverse-kernel stationarity equations.

    First evaluates, per source regime, the expected log of that regime's
    exact joint factor under the current marginal and shared reverse kernel
    (log zeta); then updates the chain kernel column-wise as
    f_rev(.|z_t) proportional to zeta * f_dagger(.|z_t); finally pools the
    per-regime reverse state kernels by precision, weighted by the updated
    chain kernel averaged over the regime marginal.

    Args:
        g_tilde: per-regime sequence of (predictive, reverse) pairs.
        f_rev_dagger: CategoricalKernel of exact reverse chain columns.
        marginal: ProductMarginal at the current time.
        current: ReverseKernelPair whose state part enters the zeta terms.

    Returns:
        Updated ReverseKernelPair.

    Raises:
        NumericError: if the pooled precision is not positive definite.
    """
    m = f_rev_dagger.size
    if len(g_tilde) != m:
        raise InputError("need one (pred, rev) pair per regime")
    d = marginal.g.dim
    m_t, p_t = marginal.g.mean, marginal.g.cov

    log_zeta = np.empty(m)
    for z in range(m):
        pred_z, rev_z = g_tilde[z]
        log_c, y, big_h, big_s = conditional_relative_entropy_likelihood(
            current.g_rev, rev_z
        )
        factor_s = _chol(big_s, "reverse kernel covariance")
        term1 = (
            log_c
            + log_pdf(GaussianDensity(big_h @ m_t, big_s), y)
            - 0.5 * np.trace(cho_solve(factor_s, big_h @ p_t @ big_h.T))
        )
        factor_p = _chol(pred_z.cov, "predictive covariance")
        term2 = log_pdf(pred_z, m_t) - 0.5 * np.trace(cho_solve(factor_p, p_t))
        log_zeta[z] = term1 + term2

    log_dag = _safe_log(f_rev_dagger.matrix)
    cols = np.empty((m, m))
    for j in range(m):
        lw = log_zeta + log_dag[:, j]
        norm = logsumexp(lw)
        if not np.isfinite(norm):
            raise NumericError("reverse chain column lost all mass")
        cols[:, j] = np.exp(lw - norm)
    cols /= cols.sum(axis=0, keepdims=True)
    f_rev = CategoricalKernel(cols)

    weights = cols @ marginal.f.probs
    prec_acc = np.zeros((d, d))
    slope_acc = np.zeros((d, d))
    offset_acc = np.zeros(d)
    for z in range(m):
        rev_z = g_tilde[z][1]
        factor = _chol(rev_z.cov, "reverse kernel covariance")
        prec = cho_solve(factor, np.eye(d))
        prec_acc += weights[z] * prec
        slope_acc += weights[z] * (prec @ rev_z.slope)
        offset_acc += weights[z] * (prec @ rev_z.offset)
    prec_acc = 0.5 * (prec_acc + prec_acc.T)
    factor_acc = _chol(prec_acc, "pooled reverse precision")
    q_rev = cho_solve(factor_acc, np.eye(d))
    g_rev = AffineGaussianKernel(
        cho_solve(factor_acc, slope_acc),
        cho_solve(factor_acc, offset_acc),
        0.5 * (q_rev + q_rev.T),
    )
    return ReverseKernelPair(f_rev, g_rev)
