"""Exact Bayesian baselines: Kalman/RTS, backward information filtering,
two-filter smoothing, the IMM filter, and a brute-force enumeration oracle
for jump Gauss-Markov systems.

These routines are the ground truth the variational solvers are measured
against. Everything here is exact (up to floating point) except the IMM
filter, which is the standard moment-matching approximation.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from jumpgauss.gaussians import (
    AffineGaussianKernel,
    Categorical,
    CategoricalKernel,
    GaussianDensity,
    InputError,
    LogQuadraticForm,
    NumericError,
    log_integral_quadratic,
    log_pdf,
    observation_log_quadratic,
    predict_and_reverse,
    quadratic_times_gaussian,
)

DEFAULT_PATH_CAP = 2**20


@dataclass(frozen=True)
class LinearGaussianSystem:
    """Linear-Gaussian state-space model over t = 0..T.

    Attributes:
        init: GaussianDensity over the initial state x_0.
        transitions: kernels x_{t-1} -> x_t for t = 1..T (length T).
        observations: kernels x_t -> y_t for t = 0..T (length T+1).
    """

    init: GaussianDensity
    transitions: tuple
    observations: tuple

    def __post_init__(self):
        transitions = tuple(self.transitions)
        observations = tuple(self.observations)
        if len(observations) != len(transitions) + 1:
            raise InputError(
                f"{len(transitions)} transitions require "
                f"{len(transitions) + 1} observation kernels, "
                f"got {len(observations)}"
            )
        d = self.init.dim
        for k in transitions:
            if k.dim_in != d or k.dim_out != d:
                raise InputError("transition kernel dimensions must match state")
        for k in observations:
            if k.dim_in != d:
                raise InputError("observation kernel input must match state")
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "observations", observations)

    @property
    def horizon(self):
        return len(self.transitions)

    @property
    def dim(self):
        return self.init.dim


@dataclass(frozen=True)
class JumpGMSystem:
    """Jump Gauss-Markov system: a finite Markov chain driving per-regime
    linear-Gaussian dynamics and observations.

    Indexing convention: the state kernel is selected by the source regime
    z_{t-1}; the observation kernel by the current regime z_t.

    Attributes:
        chain_init: Categorical over the initial regime z_0.
        chain_kernel: column-stochastic CategoricalKernel for z_{t-1} -> z_t.
        state_init: per-regime GaussianDensity for x_0 given z_0 (length M).
        state_kernels: per-regime AffineGaussianKernel, indexed by z_{t-1}.
        obs_kernels: per-regime AffineGaussianKernel, indexed by z_t.
        horizon: T >= 0 (number of transitions).
    """

    chain_init: Categorical
    chain_kernel: CategoricalKernel
    state_init: tuple
    state_kernels: tuple
    obs_kernels: tuple
    horizon: int

    def __post_init__(self):
        state_init = tuple(self.state_init)
        state_kernels = tuple(self.state_kernels)
        obs_kernels = tuple(self.obs_kernels)
        m = self.chain_init.size
        if m < 1:
            raise InputError("need at least one regime")
        if self.chain_kernel.size != m:
            raise InputError("chain kernel size must match chain init")
        if not (len(state_init) == len(state_kernels) == len(obs_kernels) == m):
            raise InputError("per-regime lists must all have length M")
        if self.horizon < 0:
            raise InputError("horizon must be >= 0")
        d = state_init[0].dim
        for g in state_init:
            if g.dim != d:
                raise InputError("state dimensions must agree across regimes")
        for k in state_kernels:
            if k.dim_in != d or k.dim_out != d:
                raise InputError("state kernel dimensions must match state")
        for k in obs_kernels:
            if k.dim_in != d:
                raise InputError("observation kernel input must match state")
        object.__setattr__(self, "state_init", state_init)
        object.__setattr__(self, "state_kernels", state_kernels)
        object.__setattr__(self, "obs_kernels", obs_kernels)
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def n_regimes(self):
        return self.chain_init.size

    @property
    def dim(self):
        return self.state_init[0].dim


@dataclass(frozen=True)
class FilterResult:
    """Filtering output shared by the Kalman and IMM filters.

    Attributes:
        marginals: per-time GaussianDensity (moment-matched overall marginal
            in the mixture case).
        log_increments: per-time log-evidence increments; the running sum is
            the log normalizing constant of the data seen so far.
        regime_probs: per-time Categorical over regimes (mixture case only).
        regime_densities: per-time tuple of per-regime GaussianDensity
            (mixture case only).
    """

    marginals: tuple
    log_increments: np.ndarray
    regime_probs: tuple = None
    regime_densities: tuple = None

    def __post_init__(self):
        inc = np.asarray(self.log_increments, dtype=float)
        if not np.all(np.isfinite(inc)):
            raise NumericError("log-evidence increments must be finite")
        inc.setflags(write=False)
        object.__setattr__(self, "marginals", tuple(self.marginals))
        object.__setattr__(self, "log_increments", inc)
        if self.regime_probs is not None:
            object.__setattr__(self, "regime_probs", tuple(self.regime_probs))
        if self.regime_densities is not None:
            object.__setattr__(
                self, "regime_densities", tuple(self.regime_densities)
            )

    @property
    def log_evidence(self):
        return float(self.log_increments.sum())

    @property
    def log_evidence_per_time(self):
        return np.cumsum(self.log_increments)


@dataclass(frozen=True)
class SmootherResult:
    """Smoothing marginals plus the reverse kernels that generated them.

    reverse_kernels[t-1] is the exact conditional of x_{t-1} given x_t under
    the posterior, for t = 1..T.
    """

    marginals: tuple
    reverse_kernels: tuple

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        object.__setattr__(self, "reverse_kernels", tuple(self.reverse_kernels))


def _check_observations(y, n_expected, dims):
    y = [np.atleast_1d(np.asarray(obs, dtype=float)) for obs in y]
    if len(y) != n_expected:
        raise InputError(f"expected {n_expected} observations, got {len(y)}")
    for t, (obs, d) in enumerate(zip(y, dims)):
        if obs.shape != (d,):
            raise InputError(
                f"observation at time {t} has shape {obs.shape}, expected ({d},)"
            )
    return y


def moment_match(components, weights):
    """Collapse a Gaussian mixture to a single moment-matched Gaussian.

    Args:
        components: list of GaussianDensity.
        weights: array of probabilities (summing to 1).

    Returns:
        GaussianDensity with the mixture's mean and covariance.
    """
    weights = np.asarray(weights, dtype=float)
    mean = sum(w * c.mean for w, c in zip(weights, components))
    cov = sum(
        w * (c.cov + np.outer(c.mean - mean, c.mean - mean))
        for w, c in zip(weights, components)
    )
    return GaussianDensity(mean, 0.5 * (cov + cov.T))


def kalman_filter(sys, y):
    """Exact filtering for a linear-Gaussian system.

    Args:
        sys: LinearGaussianSystem.
        y: sequence of T+1 observations.

    Returns:
        FilterResult with exact filtering marginals and exact log-evidence
        increments (log predictive density of each observation).
    """
    y = _check_observations(
        y, sys.horizon + 1, [k.dim_out for k in sys.observations]
    )
    marginals = []
    increments = np.empty(sys.horizon + 1)
    current = sys.init
    for t in range(sys.horizon + 1):
        if t > 0:
            current, _ = predict_and_reverse(current, sys.transitions[t - 1])
        try:
            lq = observation_log_quadratic(sys.observations[t], y[t])
            increments[t], current = quadratic_times_gaussian(lq, current)
        except NumericError as exc:
            raise NumericError(f"filter update failed at time {t}: {exc}") from exc
        marginals.append(current)
    return FilterResult(tuple(marginals), increments)


def rts_smoother(sys, filter_result):
    """Exact smoothing via the reverse-time Markov representation.

    The reverse kernels are the exact conditionals of x_{t-1} given x_t
    obtained by factorizing transition * filtered; pushing the terminal
    filtering marginal backwards through them yields the smoothing marginals.

    Args:
        sys: LinearGaussianSystem.
        filter_result: output of kalman_filter on the same system and data.

    Returns:
        SmootherResult.
    """
    if len(filter_result.marginals) != sys.horizon + 1:
        raise InputError("filter result does not match system horizon")
    reverse_kernels = []
    for t in range(1, sys.horizon + 1):
        _, rev = predict_and_reverse(
            filter_result.marginals[t - 1], sys.transitions[t - 1]
        )
        reverse_kernels.append(rev)

    marginals = [filter_result.marginals[-1]]
    for t in range(sys.horizon, 0, -1):
        rev = reverse_kernels[t - 1]
        nxt = marginals[-1]
        mean = rev.slope @ nxt.mean + rev.offset
        cov = rev.slope @ nxt.cov @ rev.slope.T + rev.cov
        marginals.append(GaussianDensity(mean, 0.5 * (cov + cov.T)))
    marginals.reverse()
    return SmootherResult(tuple(marginals), tuple(reverse_kernels))


def backward_information_filter(sys, y):
    """Backward likelihood recursion in information form.

    Produces, for each t, the log-likelihood of the strictly-future data
    given x_t as a LogQuadraticForm (improper in general). The terminal
    element (t = T) is the zero form.

    Args:
        sys: LinearGaussianSystem.
        y: sequence of T+1 observations.

    Returns:
        List of T+1 LogQuadraticForm, index t holding the future
        log-likelihood at time t.
    """
    y = _check_observations(
        y, sys.horizon + 1, [k.dim_out for k in sys.observations]
    )
    betas = [LogQuadraticForm.zero(sys.dim)]
    for t in range(sys.horizon, 0, -1):
        integrand = betas[-1] + observation_log_quadratic(
            sys.observations[t], y[t]
        )
        betas.append(log_integral_quadratic(sys.transitions[t - 1], integrand))
    betas.reverse()
    return betas


def two_filter_combine(filter_result, betas):
    """Combine forward filtering with the backward likelihood recursion.

    At each t the (normalized) product of the filtering marginal and the
    future-likelihood quadratic is the smoothing marginal, and the product's
    log-normalizer plus the filter's running evidence is the total
    log-evidence, identically in t.

    Args:
        filter_result: FilterResult from kalman_filter.
        betas: LogQuadraticForm sequence from backward_information_filter.

    Returns:
        (marginals, log_normalizers): per-time smoothing GaussianDensity and
        the per-time total log-evidence (constant across t up to roundoff).
    """
    if len(betas) != len(filter_result.marginals):
        raise InputError("filter and backward sequences differ in length")
    running = filter_result.log_evidence_per_time
    marginals = []
    log_normalizers = np.empty(len(betas))
    for t, (beta, marginal) in enumerate(zip(betas, filter_result.marginals)):
        log_norm, smoothed = quadratic_times_gaussian(beta, marginal)
        marginals.append(smoothed)
        log_normalizers[t] = running[t] + log_norm
    return marginals, log_normalizers


def imm_filter(sys, y):
    """Interacting multiple model filter for a jump Gauss-Markov system.

    Per-source prediction followed by per-destination moment-matched mixing
    (the state kernel is indexed by the source regime, so mixing happens
    after prediction), then a mode-matched update with the destination's
    observation kernel. Log-evidence increments use the pre-update mixed
    predictive, which makes them approximate.

    Args:
        sys: JumpGMSystem.
        y: sequence of horizon+1 observations.

    Returns:
        FilterResult in mixture form.
    """
    y = _check_observations(
        y, sys.horizon + 1, [sys.obs_kernels[0].dim_out] * (sys.horizon + 1)
    )
    m = sys.n_regimes
    lam = sys.chain_kernel.matrix

    regime_probs = []
    regime_densities = []
    marginals = []
    increments = np.empty(sys.horizon + 1)

    log_mu = np.log(np.maximum(sys.chain_init.probs, 1e-300))
    densities = list(sys.state_init)
    for t in range(sys.horizon + 1):
        if t > 0:
            predicted = []
            for i in range(m):
                pred, _ = predict_and_reverse(densities[i], sys.state_kernels[i])
                predicted.append(pred)
            # mixing weights: p(z_{t-1}=i | z_t=j, y_{0:t-1})
            log_joint = np.log(np.maximum(lam, 1e-300)) + log_mu[None, :]
            log_pred_mu = logsumexp(log_joint, axis=1)
            densities = []
            for j in range(m):
                w = np.exp(log_joint[j] - log_pred_mu[j])
                densities.append(moment_match(predicted, w / w.sum()))
            log_mu = log_pred_mu

        log_lik = np.empty(m)
        updated = []
        for j in range(m):
            try:
                lq = observation_log_quadratic(sys.obs_kernels[j], y[t])
                log_lik[j], post = quadratic_times_gaussian(lq, densities[j])
            except NumericError as exc:
                raise NumericError(
                    f"IMM update failed at time {t}, regime {j}: {exc}"
                ) from exc
            updated.append(post)
        increments[t] = logsumexp(log_mu + log_lik)
        log_mu = log_mu + log_lik - increments[t]
        densities = updated

        probs = np.exp(log_mu)
        cat = Categorical(probs / probs.sum())
        regime_probs.append(cat)
        regime_densities.append(tuple(densities))
        marginals.append(moment_match(densities, cat.probs))

    return FilterResult(
        tuple(marginals), increments, tuple(regime_probs), tuple(regime_densities)
    )


@dataclass(frozen=True)
class BruteForceResult:
    """Exact inference for a jump Gauss-Markov system by path enumeration.

    Filtering quantities are mixtures over regime-path prefixes; smoothing
    quantities are mixtures over full paths. Component weights are stored as
    log-weights normalized so that their log-sum-exp at time t equals the
    exact running log-evidence.
    """

    log_evidence: float
    log_evidence_per_time: np.ndarray
    filter_log_weights: tuple      # per t: array over prefixes, sums to evidence
    filter_components: tuple       # per t: tuple of GaussianDensity per prefix
    filter_end_regimes: tuple      # per t: int array, z_t of each prefix
    _paths: tuple = field(repr=False, default=None)
    _system: object = field(repr=False, default=None)
    _data: tuple = field(repr=False, default=None)

    @property
    def n_paths(self):
        return len(self.filter_log_weights[-1])

    def filter_regime_probs(self, t):
        """Exact Categorical over z_t given y_{0:t}."""
        lw = self.filter_log_weights[t]
        regimes = self.filter_end_regimes[t]
        m = self._system.n_regimes
        log_probs = np.full(m, -np.inf)
        for z in range(m):
            mask = regimes == z
            if mask.any():
                log_probs[z] = logsumexp(lw[mask])
        probs = np.exp(log_probs - logsumexp(log_probs))
        return Categorical(probs / probs.sum())

    def filter_marginal(self, t):
        """Exact moment-matched filtering marginal of x_t given y_{0:t}."""
        lw = self.filter_log_weights[t]
        w = np.exp(lw - logsumexp(lw))
        return moment_match(self.filter_components[t], w / w.sum())

    def log_u(self, t, x, z):
        """Log of the unnormalized filtering density at (x_t = x, z_t = z).

        Integrating exp(log_u) over x and summing over z gives the exact
        running evidence exp(log_evidence_per_time[t]).
        """
        lw = self.filter_log_weights[t]
        regimes = self.filter_end_regimes[t]
        mask = regimes == int(z)
        if not mask.any():
            return -np.inf
        comps = [
            log_pdf(c, x)
            for c, keep in zip(self.filter_components[t], mask)
            if keep
        ]
        return float(logsumexp(lw[mask] + np.array(comps)))

    @cached_property
    def _smoothing(self):
        sys, y = self._system, self._data
        horizon = sys.horizon
        lw_final = self.filter_log_weights[-1]
        norm = logsumexp(lw_final)
        per_path_marginals = []
        for path in self._paths:
            lgs = LinearGaussianSystem(
                sys.state_init[path[0]],
                [sys.state_kernels[path[t]] for t in range(horizon)],
                [sys.obs_kernels[path[t]] for t in range(horizon + 1)],
            )
            fr = kalman_filter(lgs, y)
            per_path_marginals.append(rts_smoother(lgs, fr).marginals)
        log_post = lw_final - norm
        return log_post, per_path_marginals

    def smooth_regime_probs(self, t):
        """Exact Categorical over z_t given all data."""
        log_post, _ = self._smoothing
        m = self._system.n_regimes
        regimes = np.array([path[t] for path in self._paths])
        log_probs = np.full(m, -np.inf)
        for z in range(m):
            mask = regimes == z
            if mask.any():
                log_probs[z] = logsumexp(log_post[mask])
        probs = np.exp(log_probs - logsumexp(log_probs))
        return Categorical(probs / probs.sum())

    def smooth_marginal(self, t):
        """Exact moment-matched smoothing marginal of x_t given all data."""
        log_post, per_path = self._smoothing
        w = np.exp(log_post)
        comps = [marg[t] for marg in per_path]
        return moment_match(comps, w / w.sum())

    def smooth_components(self, t):
        """Full-path smoothing mixture at time t: (log-weights, regimes,
        GaussianDensity components)."""
        log_post, per_path = self._smoothing
        regimes = np.array([path[t] for path in self._paths])
        return log_post, regimes, [marg[t] for marg in per_path]


def brute_force_jgm(sys, y, path_cap=DEFAULT_PATH_CAP):
    """Exact inference for a jump Gauss-Markov system by enumerating all
    M^(T+1) regime paths and running a Kalman filter along each.

    Args:
        sys: JumpGMSystem.
        y: sequence of horizon+1 observations.
        path_cap: refuse to enumerate more than this many paths.

    Returns:
        BruteForceResult.

    Raises:
        InputError: if M^(T+1) exceeds path_cap.
    """
    m = sys.n_regimes
    n_paths = m ** (sys.horizon + 1)
    if n_paths > path_cap:
        raise InputError(
            f"brute-force enumeration requires {n_paths} regime paths, "
            f"which exceeds the cap of {path_cap}"
        )
    y = _check_observations(
        y, sys.horizon + 1, [sys.obs_kernels[0].dim_out] * (sys.horizon + 1)
    )
    log_lam = np.log(np.maximum(sys.chain_kernel.matrix, 1e-300))
    log_lam0 = np.log(np.maximum(sys.chain_init.probs, 1e-300))

    # prefix expansion: each prefix carries its path, log-weight
    # (prior + evidence so far) and current filtered Gaussian
    prefixes = []
    for z0 in range(m):
        lq = observation_log_quadratic(sys.obs_kernels[z0], y[0])
        log_inc, post = quadratic_times_gaussian(lq, sys.state_init[z0])
        prefixes.append(((z0,), log_lam0[z0] + log_inc, post))

    filter_log_weights = [np.array([p[1] for p in prefixes])]
    filter_components = [tuple(p[2] for p in prefixes)]
    filter_end_regimes = [np.array([p[0][-1] for p in prefixes])]

    for t in range(1, sys.horizon + 1):
        nxt = []
        for path, lw, gauss in prefixes:
            z_prev = path[-1]
            pred, _ = predict_and_reverse(gauss, sys.state_kernels[z_prev])
            for z in range(m):
                lq = observation_log_quadratic(sys.obs_kernels[z], y[t])
                log_inc, post = quadratic_times_gaussian(lq, pred)
                nxt.append((path + (z,), lw + log_lam[z, z_prev] + log_inc, post))
        prefixes = nxt
        filter_log_weights.append(np.array([p[1] for p in prefixes]))
        filter_components.append(tuple(p[2] for p in prefixes))
        filter_end_regimes.append(np.array([p[0][-1] for p in prefixes]))

    per_time = np.array([logsumexp(lw) for lw in filter_log_weights])
    return BruteForceResult(
        log_evidence=float(per_time[-1]),
        log_evidence_per_time=per_time,
        filter_log_weights=tuple(filter_log_weights),
        filter_components=tuple(filter_components),
        filter_end_regimes=tuple(filter_end_regimes),
        _paths=tuple(p[0] for p in prefixes),
        _system=sys,
        _data=tuple(y),
    )
