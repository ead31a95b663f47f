"""Filters and smoothers for jump Gauss-Markov systems under a product family.

Assembles the per-step operations of :mod:`jumpgauss.vjgm.steps` into the
three variational estimators:

* ``suboptimal_filter`` -- the forward-only filter; each step runs a small
  coordinate-ascent loop over the reverse kernels and the current marginal.
* ``fixed_point_smoother`` -- iterated forward sweeps that re-solve the
  reverse-kernel fixed points against the previous sweep's marginals; the
  evidence lower bound is recorded per sweep and never decreases.
* ``collapsed_filter`` -- the cheaper variant that collapses the forward
  value function onto the product marginal after every step.

Scalar systems (state and observations all one-dimensional) are dispatched
to a compiled kernel when the optional extension built from ``_scalar.pyx``
is importable; ``set_backend`` forces either implementation. Both backends
run the same recursions and agree to near machine precision.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from jumpgauss.exact import JumpGMSystem, _check_observations
from jumpgauss.gaussians import (
    AffineGaussianKernel,
    Categorical,
    CategoricalKernel,
    GaussianDensity,
    InputError,
    NumericError,
    neg_relative_entropy,
    observation_log_quadratic,
    quadratic_times_gaussian,
)
from jumpgauss.vjgm.steps import (
    ForwardRepresenter,
    ProductMarginal,
    ReverseKernelPair,
    _mix_joint_weights,
    _safe_log,
    chain_predict,
    filter_update,
    joint_predict_reverse,
    reverse_kernel_update,
    value_update,
)

__all__ = [
    "VjgmFilterResult",
    "VjgmPosterior",
    "suboptimal_filter",
    "collapsed_filter",
    "fixed_point_smoother",
    "elbo",
    "backward_marginals",
    "posterior_to_dict",
    "posterior_from_dict",
    "set_backend",
    "get_backend",
    "available_backends",
]

# Inner coordinate-ascent protocol: absolute bound change below INNER_TOL or
# INNER_MAX_ITERS passes, whichever first. The marginal fixed point nested
# inside each pass is solved essentially to machine precision so the outer
# bound sequence is monotone.
INNER_TOL = 1e-9
INNER_MAX_ITERS = 25
_MARGINAL_TOL = 1e-12
_MARGINAL_MAX_ITERS = 100

try:
    from jumpgauss.vjgm import _scalar as _fast_mod
except ImportError:  # extension not built; the generic path covers everything
    _fast_mod = None

_BACKEND = "auto"


def available_backends():
    """Names of the usable implementations ('generic' always present)."""
    names = ["generic"]
    if _fast_mod is not None:
        names.append("fast")
    return tuple(names)


def set_backend(name):
    """Select the implementation: 'auto', 'generic', or 'fast'."""
    global _BACKEND
    if name not in ("auto", "generic", "fast"):
        raise InputError(f"unknown backend {name!r}")
    if name == "fast" and _fast_mod is None:
        raise InputError("compiled backend is not available")
    _BACKEND = name


def get_backend():
    return _BACKEND


def _scalar_arrays(sys):
    """Flatten a fully one-dimensional system into plain float arrays."""
    if sys.dim != 1 or any(k.dim_out != 1 for k in sys.obs_kernels):
        return None
    return {
        "lam0": np.array(sys.chain_init.probs, dtype=float, order="C"),
        "lam": np.array(sys.chain_kernel.matrix, dtype=float, order="C"),
        "init_m": np.array([g.mean[0] for g in sys.state_init]),
        "init_v": np.array([g.cov[0, 0] for g in sys.state_init]),
        "tr_a": np.array([k.slope[0, 0] for k in sys.state_kernels]),
        "tr_b": np.array([k.offset[0] for k in sys.state_kernels]),
        "tr_q": np.array([k.cov[0, 0] for k in sys.state_kernels]),
        "ob_c": np.array([k.slope[0, 0] for k in sys.obs_kernels]),
        "ob_d": np.array([k.offset[0] for k in sys.obs_kernels]),
        "ob_r": np.array([k.cov[0, 0] for k in sys.obs_kernels]),
    }


def _use_fast(sys):
    if _BACKEND == "generic" or _fast_mod is None:
        return False
    if _scalar_arrays(sys) is None:
        if _BACKEND == "fast":
            raise InputError("compiled backend only supports scalar systems")
        return False
    return True


@dataclass(frozen=True)
class VjgmFilterResult:
    """Output of the variational filters.

    Indexing the result at t yields the pair (representer, marginal); the
    reverse kernel stored at index t-1 connects times t-1 and t.

    Attributes:
        representers: tuple of ForwardRepresenter, length T+1.
        marginals: tuple of ProductMarginal, length T+1.
        reverse_kernels: tuple of ReverseKernelPair, length T.
        bounds: per-time evidence lower bounds, length T+1.
        inner_converged: per-time flags; False marks a step whose inner
            coordinate ascent exhausted its iteration budget.
    """

    representers: tuple
    marginals: tuple
    reverse_kernels: tuple
    bounds: tuple
    inner_converged: tuple

    def __post_init__(self):
        n = len(self.representers)
        if not (
            len(self.marginals) == n
            and len(self.bounds) == n
            and len(self.inner_converged) == n
            and len(self.reverse_kernels) == n - 1
        ):
            raise InputError("filter result pieces have inconsistent lengths")

    def __len__(self):
        return len(self.representers)

    def __getitem__(self, t):
        return self.representers[t], self.marginals[t]


@dataclass(frozen=True)
class VjgmPosterior:
    """Factored smoothing posterior assembled from a terminal marginal and
    reverse kernels, with the per-time marginals materialized.

    Attributes:
        marginals: tuple of ProductMarginal, length T+1.
        reverse_kernels: tuple of ReverseKernelPair, length T.
        representers: tuple of ForwardRepresenter, length T+1.
        elbo: evidence lower bound of the assembled posterior.
        elbo_trace: bound after each outer sweep (last entry equals elbo).
    """

    marginals: tuple
    reverse_kernels: tuple
    representers: tuple
    elbo: float
    elbo_trace: tuple

    def __post_init__(self):
        marginals = tuple(self.marginals)
        kernels = tuple(self.reverse_kernels)
        representers = tuple(self.representers)
        trace = tuple(float(v) for v in self.elbo_trace)
        if len(kernels) != len(marginals) - 1 or len(representers) != len(marginals):
            raise InputError("posterior pieces have inconsistent lengths")
        if not trace:
            raise InputError("elbo trace must be non-empty")
        for t in range(len(kernels)):
            nxt, prev, rev = marginals[t + 1], marginals[t], kernels[t]
            implied_f = rev.f_rev.matrix @ nxt.f.probs
            if np.max(np.abs(implied_f - prev.f.probs)) > 1e-10:
                raise InputError(
                    f"regime marginal at time {t} is inconsistent with the "
                    "reverse kernel"
                )
            implied = _push_state(nxt.g, rev.g_rev)
            if (
                np.max(np.abs(implied.mean - prev.g.mean)) > 1e-8
                or np.max(np.abs(implied.cov - prev.g.cov)) > 1e-8
            ):
                raise InputError(
                    f"state marginal at time {t} is inconsistent with the "
                    "reverse kernel"
                )
        object.__setattr__(self, "marginals", marginals)
        object.__setattr__(self, "reverse_kernels", kernels)
        object.__setattr__(self, "representers", representers)
        object.__setattr__(self, "elbo", float(self.elbo))
        object.__setattr__(self, "elbo_trace", trace)


def _push_state(g, kernel):
    """Marginalize a Gaussian through an affine-Gaussian kernel."""
    cov = kernel.slope @ g.cov @ kernel.slope.T + kernel.cov
    return GaussianDensity(kernel.slope @ g.mean + kernel.offset, 0.5 * (cov + cov.T))


def backward_marginals(terminal, reverse_kernels):
    """Propagate a terminal product marginal through reverse kernels.

    Args:
        terminal: ProductMarginal at the final time.
        reverse_kernels: sequence of ReverseKernelPair ordered by time; the
            last entry connects the final two steps.

    Returns:
        List of ProductMarginal of length len(reverse_kernels) + 1.
    """
    out = [terminal]
    current = terminal
    for rev in reversed(list(reverse_kernels)):
        current = ProductMarginal(
            rev.f_rev.apply(current.f), _push_state(current.g, rev.g_rev)
        )
        out.append(current)
    out.reverse()
    return out


def _product_bound(rep, marginal):
    """Evidence lower bound of a product marginal against a representer.

    Evaluates log_kappa + sum_z f(z) [log xi(z) + log f_star(z) - log f(z)]
    with log xi(z) the negative relative entropy of the marginal state from
    g_star[z]. Equals the fixed-point bound when the marginal solves the
    marginal stationarity equations, and is strictly smaller otherwise.
    """
    probs = marginal.f.probs
    log_f_star = _safe_log(rep.f_star.probs)
    support = probs > 0
    if np.any(np.isinf(log_f_star[support])):
        return -np.inf
    total = rep.log_kappa
    log_f = _safe_log(probs)
    for z in np.flatnonzero(support):
        log_xi = neg_relative_entropy(rep.g_star[z], marginal.g)
        total += probs[z] * (log_xi + log_f_star[z] - log_f[z])
    return float(total)


def _initial_representer(sys, y0):
    """Forward value function at time zero: per-regime conjugate updates."""
    m = sys.n_regimes
    log_prior = _safe_log(sys.chain_init.probs)
    log_w = np.empty(m)
    g_star = []
    for z in range(m):
        lq = observation_log_quadratic(sys.obs_kernels[z], y0)
        log_h, post = quadratic_times_gaussian(lq, sys.state_init[z])
        g_star.append(post)
        log_w[z] = log_prior[z] + log_h
    log_kappa = logsumexp(log_w)
    if not np.isfinite(log_kappa):
        raise NumericError("value update at time 0: no regime retains mass")
    probs = np.exp(log_w - log_kappa)
    return ForwardRepresenter(log_kappa, Categorical(probs / probs.sum()), g_star)


def _initial_reverse_pair(prev_rep, sys):
    """Reverse kernels available before any marginal exists at time t.

    The chain part is the exact Bayes reverse kernel; the shared state part
    pools the per-regime reverse kernels under the source-regime weights
    (the f_dagger columns averaged over the predicted destination).
    """
    _, f_dag = chain_predict(prev_rep.f_star, sys.chain_kernel)
    g_tilde = joint_predict_reverse(prev_rep.g_star, sys.state_kernels)
    _, g_rev, _ = _mix_joint_weights(g_tilde, prev_rep.f_star)
    return ReverseKernelPair(f_dag, g_rev), f_dag, g_tilde


def _filter_step(prev_rep, sys, y_t, t):
    """Inner coordinate ascent for one filter step at time t >= 1."""
    rev, f_dag, g_tilde = _initial_reverse_pair(prev_rep, sys)
    prev_bound = None
    converged = False
    rep = marginal = bound = None
    for _ in range(INNER_MAX_ITERS):
        rep = value_update(prev_rep, sys, y_t, rev, t)
        marginal, bound, _ = filter_update(rep, _MARGINAL_MAX_ITERS, _MARGINAL_TOL)
        rev = reverse_kernel_update(g_tilde, f_dag, marginal, rev)
        if prev_bound is not None and abs(bound - prev_bound) < INNER_TOL:
            converged = True
            break
        prev_bound = bound
    return rep, marginal, bound, rev, converged


def suboptimal_filter(sys, y):
    """Forward variational filter for a jump Gauss-Markov system.

    Runs the value-function recursion once, forward in time. Each step
    alternates closed-form updates of the reverse kernels and of the current
    product marginal until the per-time evidence bound stabilizes; the bound
    is exact for a single regime and otherwise lower-bounds the evidence.

    Args:
        sys: JumpGMSystem.
        y: sequence of T+1 observations.

    Returns:
        VjgmFilterResult.
    """
    y = _check_observations(
        y, sys.horizon + 1, [sys.obs_kernels[0].dim_out] * (sys.horizon + 1)
    )
    if _use_fast(sys):
        return _suboptimal_filter_fast(sys, y)

    representers = []
    marginals = []
    kernels = []
    bounds = []
    flags = []
    try:
        rep = _initial_representer(sys, y[0])
        marginal, bound, conv = filter_update(
            rep, _MARGINAL_MAX_ITERS, _MARGINAL_TOL
        )
    except NumericError as err:
        raise NumericError(f"variational filter failed at time 0: {err}") from err
    representers.append(rep)
    marginals.append(marginal)
    bounds.append(bound)
    flags.append(conv)

    for t in range(1, sys.horizon + 1):
        try:
            rep, marginal, bound, rev, conv = _filter_step(
                representers[-1], sys, y[t], t
            )
        except NumericError as err:
            raise NumericError(
                f"variational filter failed at time {t}: {err}"
            ) from err
        representers.append(rep)
        marginals.append(marginal)
        bounds.append(bound)
        kernels.append(rev)
        flags.append(conv)
    return VjgmFilterResult(
        tuple(representers),
        tuple(marginals),
        tuple(kernels),
        tuple(bounds),
        tuple(flags),
    )


def collapsed_filter(sys, y):
    """Variational filter with the value function collapsed after each step.

    Identical to :func:`suboptimal_filter` except that after every marginal
    update the forward value function is replaced by the product marginal
    itself, with the normalizer set to the expected log-ratio of the value
    function to the marginal (a Jensen lower bound on the true normalizer).
    Collapsing forgets the per-regime state components; when the regimes
    share one state component the collapse is lossless.

    Args:
        sys: JumpGMSystem.
        y: sequence of T+1 observations.

    Returns:
        VjgmFilterResult whose representers are the collapsed ones.
    """
    y = _check_observations(
        y, sys.horizon + 1, [sys.obs_kernels[0].dim_out] * (sys.horizon + 1)
    )
    m = sys.n_regimes
    representers = []
    marginals = []
    kernels = []
    bounds = []
    flags = []
    try:
        rep = _initial_representer(sys, y[0])
        marginal, bound, conv = filter_update(
            rep, _MARGINAL_MAX_ITERS, _MARGINAL_TOL
        )
    except NumericError as err:
        raise NumericError(f"variational filter failed at time 0: {err}") from err
    rep = ForwardRepresenter(
        _product_bound(rep, marginal), marginal.f, (marginal.g,) * m
    )
    representers.append(rep)
    marginals.append(marginal)
    bounds.append(bound)
    flags.append(conv)

    for t in range(1, sys.horizon + 1):
        try:
            rep, marginal, bound, rev, conv = _filter_step(
                representers[-1], sys, y[t], t
            )
        except NumericError as err:
            raise NumericError(
                f"variational filter failed at time {t}: {err}"
            ) from err
        rep = ForwardRepresenter(
            _product_bound(rep, marginal), marginal.f, (marginal.g,) * m
        )
        representers.append(rep)
        marginals.append(marginal)
        bounds.append(bound)
        kernels.append(rev)
        flags.append(conv)
    return VjgmFilterResult(
        tuple(representers),
        tuple(marginals),
        tuple(kernels),
        tuple(bounds),
        tuple(flags),
    )


def _sweep_step(prev_rep, sys, y_t, rev, fixed_marginal, t):
    """Re-solve the reverse-kernel fixed point at time t for frozen marginals."""
    _, f_dag = chain_predict(prev_rep.f_star, sys.chain_kernel)
    g_tilde = joint_predict_reverse(prev_rep.g_star, sys.state_kernels)
    prev_obj = None
    rep = None
    for _ in range(INNER_MAX_ITERS):
        rev = reverse_kernel_update(g_tilde, f_dag, fixed_marginal, rev)
        rep = value_update(prev_rep, sys, y_t, rev, t)
        objective = _product_bound(rep, fixed_marginal)
        if prev_obj is not None and abs(objective - prev_obj) < INNER_TOL:
            break
        prev_obj = objective
    return rep, rev


def fixed_point_smoother(sys, y, init, iters):
    """Iterated forward-sweep smoother initialized from a filter run.

    Iteration zero assembles the posterior implied by the filter: terminal
    marginal plus one backward pass through the filter's reverse kernels.
    Each further sweep re-solves the reverse-kernel fixed points forward in
    time against the previous sweep's marginals, recomputes the forward value
    functions with the new kernels, updates the terminal marginal, and runs
    the backward pass again. The recorded bound never decreases because each
    block update is an exact coordinate maximizer.

    Args:
        sys: JumpGMSystem.
        y: sequence of T+1 observations.
        init: VjgmFilterResult from :func:`suboptimal_filter`.
        iters: number of outer sweeps (>= 0).

    Returns:
        VjgmPosterior with one elbo_trace entry per sweep plus the initial one.
    """
    if iters < 0:
        raise InputError("iters must be >= 0")
    y = _check_observations(
        y, sys.horizon + 1, [sys.obs_kernels[0].dim_out] * (sys.horizon + 1)
    )
    if len(init) != sys.horizon + 1:
        raise InputError("filter initializer does not match the system horizon")

    trace0 = _product_bound(init.representers[-1], init.marginals[-1])
    if iters > 0 and sys.horizon > 0 and _use_fast(sys):
        return _smoother_fast(sys, y, init, iters, trace0)

    representers = list(init.representers)
    kernels = list(init.reverse_kernels)
    terminal = init.marginals[-1]
    marginals = backward_marginals(terminal, kernels)
    trace = [trace0]

    for _ in range(iters):
        for t in range(1, sys.horizon + 1):
            try:
                rep, rev = _sweep_step(
                    representers[t - 1],
                    sys,
                    y[t],
                    kernels[t - 1],
                    marginals[t],
                    t,
                )
            except NumericError as err:
                raise NumericError(
                    f"smoother sweep failed at time {t}: {err}"
                ) from err
            representers[t] = rep
            kernels[t - 1] = rev
        terminal, bound, _ = filter_update(
            representers[-1], _MARGINAL_MAX_ITERS, _MARGINAL_TOL
        )
        marginals = backward_marginals(terminal, kernels)
        trace.append(bound)
    return VjgmPosterior(
        tuple(marginals),
        tuple(kernels),
        tuple(representers),
        trace[-1],
        tuple(trace),
    )


def elbo(posterior, sys, y):
    """Evidence lower bound of an assembled posterior.

    Evaluated in closed form from the terminal representer and terminal
    marginal; by the telescoping of the value-function recursion this equals
    the full-path bound when the representers were computed with the
    posterior's own reverse kernels. Never exceeds the exact log evidence.

    Args:
        posterior: VjgmPosterior.
        sys: JumpGMSystem (dimension checks only).
        y: observation sequence (length check only).

    Returns:
        float bound.
    """
    _check_observations(
        y, sys.horizon + 1, [sys.obs_kernels[0].dim_out] * (sys.horizon + 1)
    )
    if len(posterior.marginals) != sys.horizon + 1:
        raise InputError("posterior does not match the system horizon")
    return _product_bound(posterior.representers[-1], posterior.marginals[-1])


def posterior_to_dict(posterior):
    """Serialize a posterior to a JSON-ready dict with fixed field names."""
    return {
        "f": [m.f.probs.tolist() for m in posterior.marginals],
        "g_mean": [m.g.mean.tolist() for m in posterior.marginals],
        "g_cov": [m.g.cov.tolist() for m in posterior.marginals],
        "f_star": [r.f_star.probs.tolist() for r in posterior.representers],
        "g_star": [
            [{"mean": g.mean.tolist(), "cov": g.cov.tolist()} for g in r.g_star]
            for r in posterior.representers
        ],
        "log_kappa": [r.log_kappa for r in posterior.representers],
        "rev_f": [k.f_rev.matrix.tolist() for k in posterior.reverse_kernels],
        "rev_a_slope": [k.g_rev.slope.tolist() for k in posterior.reverse_kernels],
        "rev_a_offset": [k.g_rev.offset.tolist() for k in posterior.reverse_kernels],
        "rev_q": [k.g_rev.cov.tolist() for k in posterior.reverse_kernels],
        "elbo_trace": list(posterior.elbo_trace),
    }


def posterior_from_dict(doc):
    """Rebuild a VjgmPosterior from :func:`posterior_to_dict` output."""
    marginals = tuple(
        ProductMarginal(
            Categorical(np.asarray(f)),
            GaussianDensity(np.asarray(mean), np.asarray(cov)),
        )
        for f, mean, cov in zip(doc["f"], doc["g_mean"], doc["g_cov"])
    )
    representers = tuple(
        ForwardRepresenter(
            log_kappa,
            Categorical(np.asarray(f_star)),
            tuple(
                GaussianDensity(np.asarray(g["mean"]), np.asarray(g["cov"]))
                for g in g_stars
            ),
        )
        for log_kappa, f_star, g_stars in zip(
            doc["log_kappa"], doc["f_star"], doc["g_star"]
        )
    )
    kernels = tuple(
        ReverseKernelPair(
            CategoricalKernel(np.asarray(f_rev)),
            AffineGaussianKernel(
                np.asarray(slope), np.asarray(offset), np.asarray(cov)
            ),
        )
        for f_rev, slope, offset, cov in zip(
            doc["rev_f"], doc["rev_a_slope"], doc["rev_a_offset"], doc["rev_q"]
        )
    )
    trace = tuple(float(v) for v in doc["elbo_trace"])
    return VjgmPosterior(marginals, kernels, representers, trace[-1], trace)


def save_posterior(posterior, path):
    """Write a posterior as a JSON document (sorted keys, stable layout)."""
    with open(path, "w") as handle:
        json.dump(posterior_to_dict(posterior), handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_posterior(path):
    """Read a posterior written by :func:`save_posterior`."""
    with open(path) as handle:
        return posterior_from_dict(json.load(handle))


def _suboptimal_filter_fast(sys, y):
    """Scalar-system filter via the compiled kernel; mirrors the generic path."""
    arrays = _scalar_arrays(sys)
    y_flat = np.array([obs[0] for obs in y], dtype=float)
    out = _fast_mod.filter_scalar(
        arrays["lam0"],
        arrays["lam"],
        arrays["init_m"],
        arrays["init_v"],
        arrays["tr_a"],
        arrays["tr_b"],
        arrays["tr_q"],
        arrays["ob_c"],
        arrays["ob_d"],
        arrays["ob_r"],
        y_flat,
        INNER_TOL,
        INNER_MAX_ITERS,
        _MARGINAL_TOL,
        _MARGINAL_MAX_ITERS,
    )
    return _unpack_filter_arrays(sys, out)


def _unpack_filter_arrays(sys, out):
    (
        log_kappa,
        f_star,
        gs_mean,
        gs_var,
        f_marg,
        g_mean,
        g_var,
        bounds,
        rev_f,
        rev_a,
        rev_b,
        rev_q,
        flags,
    ) = out
    n = sys.horizon + 1
    representers = tuple(
        ForwardRepresenter(
            log_kappa[t],
            Categorical(f_star[t] / f_star[t].sum()),
            tuple(
                GaussianDensity(np.array([gs_mean[t, z]]), np.array([[gs_var[t, z]]]))
                for z in range(sys.n_regimes)
            ),
        )
        for t in range(n)
    )
    marginals = tuple(
        ProductMarginal(
            Categorical(f_marg[t] / f_marg[t].sum()),
            GaussianDensity(np.array([g_mean[t]]), np.array([[g_var[t]]])),
        )
        for t in range(n)
    )
    kernels = tuple(
        ReverseKernelPair(
            CategoricalKernel(rev_f[t] / rev_f[t].sum(axis=0, keepdims=True)),
            AffineGaussianKernel(
                np.array([[rev_a[t]]]), np.array([rev_b[t]]), np.array([[rev_q[t]]])
            ),
        )
        for t in range(n - 1)
    )
    return VjgmFilterResult(
        representers,
        marginals,
        kernels,
        tuple(float(b) for b in bounds),
        tuple(bool(v) for v in flags),
    )


def _smoother_fast(sys, y, init, iters, trace0):
    """Array-level smoother sweeps via the compiled kernel."""
    arrays = _scalar_arrays(sys)
    n = sys.horizon + 1
    m = sys.n_regimes
    y_flat = np.array([obs[0] for obs in y], dtype=float)
    log_kappa = np.array([r.log_kappa for r in init.representers])
    f_star = np.stack([r.f_star.probs for r in init.representers])
    gs_mean = np.array([[g.mean[0] for g in r.g_star] for r in init.representers])
    gs_var = np.array([[g.cov[0, 0] for g in r.g_star] for r in init.representers])
    rev_f = np.stack([k.f_rev.matrix for k in init.reverse_kernels])
    rev_a = np.array([k.g_rev.slope[0, 0] for k in init.reverse_kernels])
    rev_b = np.array([k.g_rev.offset[0] for k in init.reverse_kernels])
    rev_q = np.array([k.g_rev.cov[0, 0] for k in init.reverse_kernels])

    terminal = init.marginals[-1]
    fix_f, fix_gm, fix_gv = _fast_mod.backward_scalar(
        np.array(terminal.f.probs), terminal.g.mean[0], terminal.g.cov[0, 0],
        rev_f, rev_a, rev_b, rev_q,
    )
    trace = [trace0]
    for _ in range(iters):
        _fast_mod.sweep_scalar(
            arrays["lam"],
            arrays["tr_a"],
            arrays["tr_b"],
            arrays["tr_q"],
            arrays["ob_c"],
            arrays["ob_d"],
            arrays["ob_r"],
            y_flat,
            log_kappa,
            f_star,
            gs_mean,
            gs_var,
            rev_f,
            rev_a,
            rev_b,
            rev_q,
            fix_f,
            fix_gm,
            fix_gv,
            INNER_TOL,
            INNER_MAX_ITERS,
        )
        f_term, gm_term, gv_term, bound, _ = _fast_mod.terminal_scalar(
            log_kappa[-1], f_star[-1], gs_mean[-1], gs_var[-1],
            _MARGINAL_TOL, _MARGINAL_MAX_ITERS,
        )
        fix_f, fix_gm, fix_gv = _fast_mod.backward_scalar(
            f_term, gm_term, gv_term, rev_f, rev_a, rev_b, rev_q
        )
        trace.append(bound)

    representers = tuple(
        ForwardRepresenter(
            log_kappa[t],
            Categorical(f_star[t] / f_star[t].sum()),
            tuple(
                GaussianDensity(np.array([gs_mean[t, z]]), np.array([[gs_var[t, z]]]))
                for z in range(m)
            ),
        )
        for t in range(n)
    )
    kernels = tuple(
        ReverseKernelPair(
            CategoricalKernel(rev_f[t] / rev_f[t].sum(axis=0, keepdims=True)),
            AffineGaussianKernel(
                np.array([[rev_a[t]]]), np.array([rev_b[t]]), np.array([[rev_q[t]]])
            ),
        )
        for t in range(n - 1)
    )
    marginals = tuple(
        ProductMarginal(
            Categorical(fix_f[t] / fix_f[t].sum()),
            GaussianDensity(np.array([fix_gm[t]]), np.array([[fix_gv[t]]])),
        )
        for t in range(n)
    )
    return VjgmPosterior(
        marginals, kernels, representers, trace[-1], tuple(trace)
    )
