"""Time the pure-Python and compiled solver backends on one workload.

The workload is the ladder benchmark model at a configurable horizon: one
variational filter pass plus a number of fixed-point smoother sweeps. Both
backends run the identical computation; the script reports wall-clock times,
the speedup, and the largest numerical deviation between the two results.

Usage:
    python benchmarks/compare_backends.py [--horizon 129] [--sweeps 10]
        [--repeat 3] [--seed 0]
"""

import argparse
import time

import numpy as np

from jumpgauss.experiments import StaircaseConfig, build_staircase, simulate
from jumpgauss.vjgm import (
    available_backends,
    fixed_point_smoother,
    set_backend,
    suboptimal_filter,
)


def run_once(sys_model, y, sweeps):
    filt = suboptimal_filter(sys_model, y)
    posterior = fixed_point_smoother(sys_model, y, filt, sweeps)
    return filt, posterior


def deviation(a, b):
    worst = abs(a[1].elbo - b[1].elbo)
    for left, right in zip(a[1].marginals, b[1].marginals):
        worst = max(worst, np.max(np.abs(left.f.probs - right.f.probs)))
        worst = max(worst, np.max(np.abs(left.g.mean - right.g.mean)))
        worst = max(worst, np.max(np.abs(left.g.cov - right.g.cov)))
    return worst


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--horizon", type=int, default=129)
    parser.add_argument("--sweeps", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cfg = StaircaseConfig(t=args.horizon, seed=args.seed)
    sys_model = build_staircase(cfg)
    _, _, y = simulate(sys_model, cfg.seed)
    y = list(y)

    backends = available_backends()
    print(f"workload: horizon={args.horizon} regimes={cfg.m} sweeps={args.sweeps}")
    print(f"backends: {', '.join(backends)}")

    results = {}
    timings = {}
    for backend in backends:
        set_backend(backend)
        best = np.inf
        for _ in range(args.repeat):
            start = time.perf_counter()
            results[backend] = run_once(sys_model, y, args.sweeps)
            best = min(best, time.perf_counter() - start)
        timings[backend] = best
        print(f"{backend:>8}: {best * 1e3:9.1f} ms (best of {args.repeat})")
    set_backend("auto")

    if "generic" in results and "fast" in results:
        speedup = timings["generic"] / timings["fast"]
        worst = deviation(results["generic"], results["fast"])
        print(f"speedup : {speedup:.1f}x")
        print(f"max deviation between backends: {worst:.2e}")
        if worst > 1e-8:
            raise SystemExit("backends disagree beyond 1e-8")
    elif "fast" not in results:
        print("compiled backend unavailable; built the extension to compare")


if __name__ == "__main__":
    main()
