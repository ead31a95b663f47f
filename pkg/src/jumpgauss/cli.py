"""Command-line interface over the benchmark model and the solvers.

Subcommands:
  simulate    sample one trajectory of the configured model into JSON
  filter      run the variational filter, write the posterior, print its bound
  smooth      run the fixed-point smoother, write the posterior, print its bound
  experiment  run the Monte Carlo comparison (metrics.csv + summary.json)
  verify      run the property suite on random instances, print a result table

Configs are TOML files whose keys mirror StaircaseConfig field names. Exit
codes: 0 on success, 1 when a verified property fails (or a solver breaks
down numerically), 2 on usage, config, or IO errors.
"""

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .exact import JumpGMSystem, LinearGaussianSystem, brute_force_jgm, kalman_filter
from .experiments import StaircaseConfig, build_staircase, run_experiment, simulate
from .gaussians import (
    AffineGaussianKernel,
    Categorical,
    CategoricalKernel,
    GaussianDensity,
    InputError,
    NumericError,
)
from .vjgm import (
    collapsed_filter,
    fixed_point_smoother,
    save_posterior,
    suboptimal_filter,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_USAGE = 2

_CONFIG_FIELDS = (
    "m",
    "p",
    "phi0",
    "mu0_rule",
    "sigma0",
    "r",
    "t",
    "trials",
    "seed",
    "smoother_iters",
)

_BOUND_TOL = 1e-9
_COLLAPSE_TOL = 1e-8


class _UsageError(Exception):
    """Bad invocation, config, or data file; maps to exit code 2."""


def _log(args, message):
    if args.verbose:
        print(message, file=sys.stderr)


def _load_config(args):
    path = args.config
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise _UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise _UsageError(f"config {path} is not valid TOML: {exc}") from exc
    unknown = sorted(set(raw) - set(_CONFIG_FIELDS))
    if unknown:
        raise _UsageError(
            f"config {path} has unknown keys: {', '.join(unknown)}"
        )
    if getattr(args, "full_scale", False):
        raw["t"] = 513
        raw["trials"] = 1000
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        raw["trials"] = args.trials
    if getattr(args, "iters", None) is not None:
        raw["smoother_iters"] = args.iters
    try:
        return StaircaseConfig(**raw)
    except (InputError, TypeError) as exc:
        raise _UsageError(f"config {path} is invalid: {exc}") from exc


def _prepare_out(path):
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _UsageError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _read_observations(path):
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise _UsageError(f"cannot read data {path}: {exc}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise _UsageError(f"data file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "y" not in doc:
        raise _UsageError(f"data file {path} has no 'y' array")
    try:
        return [np.atleast_1d(np.asarray(v, dtype=float)) for v in doc["y"]]
    except (TypeError, ValueError) as exc:
        raise _UsageError(f"data file {path}: 'y' is not numeric: {exc}") from exc


def _cmd_simulate(args):
    cfg = _load_config(args)
    out = _prepare_out(args.out)
    z, x, y = simulate(build_staircase(cfg), cfg.seed)
    doc = {
        "z": [int(v) for v in z],
        "x": [float(v) for v in x[:, 0]],
        "y": [float(v) for v in y[:, 0]],
    }
    target = out / "paths.json"
    with open(target, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2, sort_keys=True)
        handle.write("\n")
    _log(args, f"wrote {target}")
    return EXIT_OK


def _run_posterior(args, iters):
    cfg = _load_config(args)
    out = _prepare_out(args.out)
    y = _read_observations(args.data)
    sys_model = build_staircase(cfg)
    filt = suboptimal_filter(sys_model, y)
    posterior = fixed_point_smoother(sys_model, y, filt, iters)
    target = out / "posterior.json"
    save_posterior(posterior, target)
    _log(args, f"wrote {target}")
    print(posterior.elbo)
    return EXIT_OK


def _cmd_filter(args):
    return _run_posterior(args, 0)


def _cmd_smooth(args):
    cfg_iters = args.iters
    if cfg_iters is None:
        cfg_iters = _load_config(args).smoother_iters
    return _run_posterior(args, cfg_iters)


def _cmd_experiment(args):
    cfg = _load_config(args)
    out = _prepare_out(args.out)
    _log(args, f"running {cfg.trials} trials at horizon {cfg.t}")
    run_experiment(cfg, out, workers=args.workers)
    _log(args, f"wrote {out / 'metrics.csv'} and {out / 'summary.json'}")
    return EXIT_OK


def _random_scalar_system(rng, m, horizon):
    def variance():
        return float(rng.gamma(2.0) + 0.2)

    def probs(size):
        w = rng.gamma(2.0, size=size) + 1e-2
        return w / w.sum(axis=0, keepdims=True)

    return JumpGMSystem(
        chain_init=Categorical(probs(m)),
        chain_kernel=CategoricalKernel(probs((m, m))),
        state_init=[
            GaussianDensity(rng.standard_normal(1), np.array([[variance()]]))
            for _ in range(m)
        ],
        state_kernels=[
            AffineGaussianKernel(
                np.array([[float(rng.uniform(-1.1, 1.1))]]),
                rng.standard_normal(1),
                np.array([[variance()]]),
            )
            for _ in range(m)
        ],
        obs_kernels=[
            AffineGaussianKernel(
                np.array([[float(rng.uniform(0.5, 1.5))]]),
                rng.standard_normal(1),
                np.array([[variance()]]),
            )
            for _ in range(m)
        ],
        horizon=horizon,
    )


def _verify_instance(sys_model, y, kappa_shift):
    """Check one instance; returns {check name: bool} (collapse only at M=1)."""
    results = {}
    bf = brute_force_jgm(sys_model, y)
    filt = suboptimal_filter(sys_model, y)
    posterior = fixed_point_smoother(sys_model, y, filt, 5)
    collapsed = collapsed_filter(sys_model, y)
    reported = [
        filt.bounds[-1] + kappa_shift,
        posterior.elbo + kappa_shift,
        collapsed.bounds[-1] + kappa_shift,
    ]
    results["bound-below-exact-evidence"] = all(
        b <= bf.log_evidence + _BOUND_TOL for b in reported
    )
    trace = np.array(posterior.elbo_trace)
    results["elbo-trace-monotone"] = bool(np.all(np.diff(trace) >= -_BOUND_TOL))
    if sys_model.n_regimes == 1:
        lin = LinearGaussianSystem(
            sys_model.state_init[0],
            [sys_model.state_kernels[0]] * sys_model.horizon,
            [sys_model.obs_kernels[0]] * (sys_model.horizon + 1),
        )
        kf = kalman_filter(lin, y)
        same_evidence = abs(filt.bounds[-1] - kf.log_evidence) <= _COLLAPSE_TOL
        terminal = filt.marginals[-1].g
        same_moments = np.allclose(
            terminal.mean, kf.marginals[-1].mean, atol=_COLLAPSE_TOL
        ) and np.allclose(terminal.cov, kf.marginals[-1].cov, atol=_COLLAPSE_TOL)
        results["single-regime-matches-kalman"] = same_evidence and same_moments
    return results


def _cmd_verify(args):
    if args.instances < 0:
        raise _UsageError("--instances must be nonnegative")
    if args.max_t < 1 or args.max_m < 1:
        raise _UsageError("--max-t and --max-m must be at least 1")
    if args.instances == 0:
        print("warning: no checks run (instances=0)", file=sys.stderr)
        return EXIT_OK

    rng = np.random.default_rng(args.seed)
    counts = {}
    for i in range(args.instances):
        m = 1 + i % args.max_m
        horizon = int(rng.integers(1, args.max_t + 1))
        sys_model = _random_scalar_system(rng, m, horizon)
        _, _, y = simulate(sys_model, args.seed, trial=i)
        try:
            outcome = _verify_instance(sys_model, list(y), args.kappa_shift)
        except NumericError as exc:
            print(f"error: instance {i} failed to solve: {exc}", file=sys.stderr)
            return EXIT_PROPERTY
        for name, ok in outcome.items():
            passed, failed = counts.get(name, (0, 0))
            counts[name] = (passed + ok, failed + (not ok))
            if not ok:
                _log(args, f"instance {i} (M={m}, T={horizon}) failed {name}")

    width = max(len(name) for name in counts)
    print(f"{'check'.ljust(width)}  pass  fail")
    failures = 0
    for name in sorted(counts):
        passed, failed = counts[name]
        failures += failed
        print(f"{name.ljust(width)}  {passed:4d}  {failed:4d}")
    if failures:
        print(f"FAILED: {failures} check(s) did not hold")
        return EXIT_PROPERTY
    print("all checks passed")
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="jumpgauss",
        description="Simulation, variational inference, and benchmarks "
        "for jump Gauss-Markov systems.",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="log progress to stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_out(p):
        p.add_argument("--config", type=Path, required=True, help="TOML config")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")

    p = sub.add_parser("simulate", help="sample one trajectory to JSON")
    add_config_out(p)
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("filter", help="variational filter over a data file")
    add_config_out(p)
    p.add_argument("--data", type=Path, required=True, help="paths JSON with 'y'")
    p.set_defaults(handler=_cmd_filter)

    p = sub.add_parser("smooth", help="fixed-point smoother over a data file")
    add_config_out(p)
    p.add_argument("--data", type=Path, required=True, help="paths JSON with 'y'")
    p.add_argument("--iters", type=int, default=None, help="override sweep count")
    p.set_defaults(handler=_cmd_smooth)

    p = sub.add_parser("experiment", help="Monte Carlo comparison run")
    add_config_out(p)
    p.add_argument("--trials", type=int, default=None, help="override trial count")
    p.add_argument("--iters", type=int, default=None, help="override sweep count")
    p.add_argument(
        "--full-scale",
        action="store_true",
        help="use the large preset (t=513, 1000 trials)",
    )
    p.add_argument(
        "--workers", type=int, default=1, help="worker threads for trials"
    )
    p.set_defaults(handler=_cmd_experiment)

    p = sub.add_parser("verify", help="property suite on random instances")
    p.add_argument("--max-t", type=int, default=6, help="largest horizon")
    p.add_argument("--max-m", type=int, default=3, help="largest regime count")
    p.add_argument("--instances", type=int, default=20, help="instance count")
    p.add_argument("--seed", type=int, default=0, help="instance generator seed")
    p.add_argument(
        "--kappa-shift",
        type=float,
        default=0.0,
        help="test hook: add this to every reported bound before checking",
    )
    p.set_defaults(handler=_cmd_verify)
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.handler(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
