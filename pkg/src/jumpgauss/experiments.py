"""Monte Carlo benchmark on an adjacent-jump autoregressive ladder.

The benchmark model is a bank of M stationary AR(1) processes whose levels
sit one unit apart (regime j is centered at j), a sticky regime chain that
either stays put or moves to an adjacent regime, and identity observations.
The harness simulates trials with a counter-based generator, runs the
moment-matched mixture filter and the variational filter/smoother on each
trial, and records per-trial metrics as CSV plus aggregate summaries as JSON.

Per-trial metrics:
  - rmse_x: root mean squared error of the posterior state means.
  - accuracy_z: fraction of times the regime posterior's mode is correct.
  - log_odds_z: mean natural-log odds of the true regime, probabilities
    clamped to [1e-12, 1 - 1e-12].
  - chi2: calibration statistic. In filtering mode, the sum of per-time
    standardized squared errors. In smoothing mode, the whole-path statistic
    from the reverse-Markov factorization: the terminal standardized squared
    error plus one standardized backward-prediction residual per step. Both
    are chi-square with one degree of freedom per time point (per state
    dimension) when the reported Gaussians are calibrated.
"""

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .exact import FilterResult, JumpGMSystem, imm_filter
from .gaussians import (
    AffineGaussianKernel,
    Categorical,
    CategoricalKernel,
    GaussianDensity,
    InputError,
    NumericError,
)
from .vjgm import fixed_point_smoother, suboptimal_filter

__all__ = [
    "CSV_HEADER",
    "LOG_ODDS_EPS",
    "StaircaseConfig",
    "TrialMetrics",
    "build_staircase",
    "compute_metrics",
    "run_experiment",
    "simulate",
]

LOG_ODDS_EPS = 1e-12

CSV_HEADER = (
    "trial",
    "method",
    "mode",
    "rmse_x",
    "accuracy_z",
    "log_odds_z",
    "chi2",
    "elbo",
    "failed",
)

# Stream tags for the counter-based generator; new consumers of trial
# randomness get their own tag so adding one never shifts existing draws.
_SIM_STREAM = 0

_METRIC_FIELDS = ("rmse_x", "accuracy_z", "log_odds_z", "chi2", "elbo")


@dataclass(frozen=True)
class StaircaseConfig:
    """Configuration of the ladder benchmark.

    Attributes:
        m: number of regimes.
        p: probability of staying in the current regime.
        phi0: AR(1) coefficient, |phi0| < 1.
        mu0_rule: how regime levels are assigned; only "z_minus_1" is
            supported (regime j, counted from 0, has stationary mean j).
        sigma0: stationary standard deviation of each AR(1) process.
        r: observation noise variance.
        t: horizon; a trial has t + 1 time points.
        trials: number of Monte Carlo trials.
        seed: base key of the counter-based generator (64-bit unsigned).
        smoother_iters: fixed-point sweeps for the iterated smoother.
    """

    m: int = 4
    p: float = 0.9
    phi0: float = 0.5
    mu0_rule: str = "z_minus_1"
    sigma0: float = 0.5
    r: float = 1.0
    t: int = 129
    trials: int = 100
    seed: int = 0
    smoother_iters: int = 10

    def __post_init__(self):
        if self.m < 1:
            raise InputError("m must be at least 1")
        if not 0.0 < self.p < 1.0:
            raise InputError("p must lie strictly between 0 and 1")
        if not abs(self.phi0) < 1.0:
            raise InputError("phi0 must have magnitude below 1")
        if self.mu0_rule != "z_minus_1":
            raise InputError(f"unsupported mu0_rule: {self.mu0_rule!r}")
        if not self.sigma0 > 0.0:
            raise InputError("sigma0 must be positive")
        if not self.r > 0.0:
            raise InputError("r must be positive")
        if self.t < 0:
            raise InputError("t must be nonnegative")
        if self.trials < 0:
            raise InputError("trials must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise InputError("seed must fit in 64 unsigned bits")
        if self.smoother_iters < 0:
            raise InputError("smoother_iters must be nonnegative")


@dataclass(frozen=True)
class TrialMetrics:
    """One CSV row: metrics of one method/mode pair on one trial."""

    trial: int
    method: str
    mode: str
    rmse_x: float
    accuracy_z: float
    log_odds_z: float
    chi2: float
    elbo: float
    failed: bool = False


def build_staircase(cfg):
    """Assemble the jump system described by a StaircaseConfig.

    The regime chain stays with probability p and otherwise moves to an
    adjacent regime, splitting the move mass evenly; at the ends the single
    neighbor receives all of it (with one regime there is no neighbor, so
    the chain is degenerate at that regime). Regime j runs a stationary
    AR(1) process with mean j and variance sigma0**2, so its transition
    noise is (1 - phi0**2) * sigma0**2. Observations are the state plus
    noise of variance r. The initial regime distribution is uniform.
    """
    m = cfg.m
    lam = np.zeros((m, m))
    for j in range(m):
        neighbors = [i for i in (j - 1, j + 1) if 0 <= i < m]
        if not neighbors:
            lam[j, j] = 1.0
            continue
        lam[j, j] = cfg.p
        for i in neighbors:
            lam[i, j] = (1.0 - cfg.p) / len(neighbors)
    var0 = cfg.sigma0**2
    noise = (1.0 - cfg.phi0**2) * var0
    return JumpGMSystem(
        chain_init=Categorical(np.full(m, 1.0 / m)),
        chain_kernel=CategoricalKernel(lam),
        state_init=[
            GaussianDensity(np.array([float(j)]), np.array([[var0]]))
            for j in range(m)
        ],
        state_kernels=[
            AffineGaussianKernel(
                np.array([[cfg.phi0]]),
                np.array([(1.0 - cfg.phi0) * float(j)]),
                np.array([[noise]]),
            )
            for j in range(m)
        ],
        obs_kernels=[
            AffineGaussianKernel(
                np.array([[1.0]]), np.array([0.0]), np.array([[cfg.r]])
            )
            for _ in range(m)
        ],
        horizon=cfg.t,
    )


def _keyed_rng(seed, trial, stream):
    """Counter-based generator keyed by (seed, trial, stream).

    Philox draws are a pure function of the key, so trials are reproducible
    bit-for-bit regardless of platform, execution order, or worker count.
    """
    if not 0 <= trial < 2**32:
        raise InputError("trial index must fit in 32 unsigned bits")
    key = np.array([seed, (trial << 32) + stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_categorical(rng, probs):
    cum = np.cumsum(probs)
    index = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(index, len(probs) - 1)


def _draw_gaussian(rng, mean, cov):
    return mean + np.linalg.cholesky(cov) @ rng.standard_normal(len(mean))


def simulate(sys, seed, trial=0):
    """Sample one (z, x, y) path ancestrally.

    Uses a counter-based generator keyed by (seed, trial), so the result is
    a pure function of those arguments. Returns integer regimes of shape
    (horizon+1,), states of shape (horizon+1, dim), and observations of
    shape (horizon+1, obs_dim).
    """
    rng = _keyed_rng(seed, trial, _SIM_STREAM)
    z = _draw_categorical(rng, sys.chain_init.probs)
    x = _draw_gaussian(rng, sys.state_init[z].mean, sys.state_init[z].cov)
    zs, xs, ys = [], [], []
    for t in range(sys.horizon + 1):
        if t > 0:
            k = sys.state_kernels[z]
            z = _draw_categorical(rng, sys.chain_kernel.matrix[:, z])
            x = _draw_gaussian(rng, k.slope @ x + k.offset, k.cov)
        zs.append(z)
        xs.append(x)
        ko = sys.obs_kernels[z]
        ys.append(_draw_gaussian(rng, ko.slope @ x + ko.offset, ko.cov))
    return np.array(zs), np.array(xs), np.array(ys)


def _per_time_moments(output):
    """Per-time (mean, cov, regime probabilities) from a filter/smoother."""
    if isinstance(output, FilterResult):
        if output.regime_probs is None:
            raise InputError("filter output lacks regime probabilities")
        means = [g.mean for g in output.marginals]
        covs = [g.cov for g in output.marginals]
        probs = [f.probs for f in output.regime_probs]
    else:
        means = [marginal.g.mean for marginal in output.marginals]
        covs = [marginal.g.cov for marginal in output.marginals]
        probs = [marginal.f.probs for marginal in output.marginals]
    return means, covs, probs


def compute_metrics(truth, output, mode, *, trial=0, method="", elbo=np.nan):
    """Score one filter or smoother output against the simulated truth.

    Args:
        truth: (z, x) pair as returned by simulate.
        output: a mixture FilterResult, a variational filter result, or (in
            smoothing mode) a variational posterior with reverse kernels.
        mode: "filtering" or "smoothing"; selects the chi2 statistic.
        trial, method, elbo: passed through into the returned row.
    """
    if mode not in ("filtering", "smoothing"):
        raise InputError(f"unknown metrics mode: {mode!r}")
    z_true = np.asarray(truth[0], dtype=int)
    x_true = np.asarray(truth[1], dtype=float).reshape(len(z_true), -1)
    means, covs, probs = _per_time_moments(output)
    if len(means) != len(z_true):
        raise InputError(
            f"output has {len(means)} marginals for {len(z_true)} time points"
        )

    errors = x_true - np.array(means)
    rmse = float(np.sqrt(np.mean(np.sum(errors**2, axis=1))))

    hits = [int(np.argmax(p) == z) for p, z in zip(probs, z_true)]
    accuracy = float(np.mean(hits))
    p_true = np.array([p[z] for p, z in zip(probs, z_true)])
    top = np.clip(p_true, LOG_ODDS_EPS, 1.0 - LOG_ODDS_EPS)
    bottom = np.clip(1.0 - p_true, LOG_ODDS_EPS, 1.0 - LOG_ODDS_EPS)
    log_odds = float(np.mean(np.log(top) - np.log(bottom)))

    if mode == "filtering":
        chi2 = sum(
            float(e @ np.linalg.solve(c, e)) for e, c in zip(errors, covs)
        )
    else:
        kernels = getattr(output, "reverse_kernels", None)
        if kernels is None:
            raise InputError("smoothing metrics require reverse kernels")
        chi2 = float(errors[-1] @ np.linalg.solve(covs[-1], errors[-1]))
        for t, pair in enumerate(kernels):
            k = pair.g_rev
            residual = x_true[t] - (k.slope @ x_true[t + 1] + k.offset)
            chi2 += float(residual @ np.linalg.solve(k.cov, residual))

    return TrialMetrics(
        trial=trial,
        method=method,
        mode=mode,
        rmse_x=rmse,
        accuracy_z=accuracy,
        log_odds_z=log_odds,
        chi2=float(chi2),
        elbo=float(elbo),
    )


def _failed_row(trial, method, mode):
    nan = float("nan")
    return TrialMetrics(trial, method, mode, nan, nan, nan, nan, nan, True)


def _trial_rows(sys, cfg, trial):
    """Run every method on one simulated trial; failures become flag rows."""
    method_k = f"vjgm{cfg.smoother_iters}"
    z, x, y = simulate(sys, cfg.seed, trial)
    truth = (z, x)
    observations = list(y)
    rows = []

    try:
        mixture = imm_filter(sys, observations)
        rows.append(
            compute_metrics(
                truth,
                mixture,
                "filtering",
                trial=trial,
                method="imm",
                elbo=mixture.log_evidence,
            )
        )
    except NumericError:
        rows.append(_failed_row(trial, "imm", "filtering"))

    filt = None
    try:
        filt = suboptimal_filter(sys, observations)
        rows.append(
            compute_metrics(
                truth,
                filt,
                "filtering",
                trial=trial,
                method="vjgm0",
                elbo=filt.bounds[-1],
            )
        )
    except NumericError:
        rows.append(_failed_row(trial, "vjgm0", "filtering"))

    for method, iters in (("vjgm0", 0), (method_k, cfg.smoother_iters)):
        if filt is None:
            rows.append(_failed_row(trial, method, "smoothing"))
            continue
        try:
            posterior = fixed_point_smoother(sys, observations, filt, iters)
            rows.append(
                compute_metrics(
                    truth,
                    posterior,
                    "smoothing",
                    trial=trial,
                    method=method,
                    elbo=posterior.elbo,
                )
            )
        except NumericError:
            rows.append(_failed_row(trial, method, "smoothing"))
    return rows


def _mean_and_error(values):
    if len(values) == 0:
        return {"mean": None, "std_error": None}
    arr = np.asarray(values, dtype=float)
    error = (
        float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else None
    )
    return {"mean": float(arr.mean()), "std_error": error}


def _summarize(cfg, rows):
    groups = {}
    for row in rows:
        groups.setdefault((row.method, row.mode), []).append(row)
    methods = {}
    for (method, mode), group in sorted(groups.items()):
        ok = [r for r in group if not r.failed]
        stats = {
            field: _mean_and_error([getattr(r, field) for r in ok])
            for field in _METRIC_FIELDS
        }
        methods.setdefault(method, {})[mode] = {
            "metrics": stats,
            "trials": len(group),
            "failures": len(group) - len(ok),
        }

    method_k = f"vjgm{cfg.smoother_iters}"
    base = {
        r.trial: r.elbo
        for r in rows
        if r.method == "vjgm0" and r.mode == "smoothing" and not r.failed
    }
    gains = [
        r.elbo - base[r.trial]
        for r in rows
        if r.method == method_k
        and r.mode == "smoothing"
        and not r.failed
        and r.trial in base
    ]
    improvement = _mean_and_error(gains)
    improvement["min"] = float(min(gains)) if gains else None
    improvement["max"] = float(max(gains)) if gains else None
    improvement["values"] = [float(g) for g in gains]

    return {
        "config": asdict(cfg),
        "chi2_reference_df": cfg.t + 1,
        "log_odds": {"base": "e", "epsilon": LOG_ODDS_EPS},
        "methods": methods,
        "elbo_improvement": improvement,
    }


def _format_cell(value):
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(
                [_format_cell(getattr(row, field)) for field in CSV_HEADER]
            )


def run_experiment(cfg, out_dir, workers=1):
    """Run the Monte Carlo comparison and write metrics.csv + summary.json.

    Each trial is simulated with its own keyed generator and scored with the
    mixture filter (filtering), the variational filter (filtering), its
    zero-iteration backward pass (smoothing), and the iterated smoother
    (smoothing). Trials are independent; with workers > 1 they run on a
    thread pool, but rows are always written in trial order and the output
    bytes do not depend on the worker count. Returns (rows, summary).
    """
    if workers < 1:
        raise InputError("workers must be at least 1")
    sys = build_staircase(cfg)
    trials = range(cfg.trials)
    if workers == 1:
        per_trial = [_trial_rows(sys, cfg, i) for i in trials]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(lambda i: _trial_rows(sys, cfg, i), trials))
    rows = [row for chunk in per_trial for row in chunk]
    summary = _summarize(cfg, rows)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metrics.csv", rows)
    with open(out / "summary.json", "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return rows, summary
