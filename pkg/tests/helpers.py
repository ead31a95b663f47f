"""Shared random-instance generators for the test suite."""

import numpy as np

from jumpgauss.gaussians import (
    AffineGaussianKernel,
    Categorical,
    CategoricalKernel,
    GaussianDensity,
)


def random_spd(rng, d, scale=1.0):
    """Well-conditioned random symmetric positive definite matrix."""
    a = rng.standard_normal((d, d))
    mat = a @ a.T + d * np.eye(d)
    return scale * 0.5 * (mat + mat.T)


def random_gaussian(rng, d, mean_scale=2.0, cov_scale=1.0):
    return GaussianDensity(
        mean_scale * rng.standard_normal(d), random_spd(rng, d, cov_scale)
    )


def random_kernel(rng, d_in, d_out, cov_scale=1.0):
    return AffineGaussianKernel(
        rng.standard_normal((d_out, d_in)),
        rng.standard_normal(d_out),
        random_spd(rng, d_out, cov_scale),
    )


def random_categorical(rng, m):
    w = rng.gamma(2.0, size=m) + 1e-3
    return Categorical(w / w.sum())


def random_categorical_kernel(rng, m):
    w = rng.gamma(2.0, size=(m, m)) + 1e-3
    return CategoricalKernel(w / w.sum(axis=0, keepdims=True))


def random_linear_system(rng, d, horizon, obs_dim=None):
    from jumpgauss.exact import LinearGaussianSystem

    obs_dim = d if obs_dim is None else obs_dim
    return LinearGaussianSystem(
        random_gaussian(rng, d),
        [random_kernel(rng, d, d) for _ in range(horizon)],
        [random_kernel(rng, d, obs_dim) for _ in range(horizon + 1)],
    )


def random_jump_system(rng, m, horizon, d=1, obs_dim=1):
    from jumpgauss.exact import JumpGMSystem

    return JumpGMSystem(
        chain_init=random_categorical(rng, m),
        chain_kernel=random_categorical_kernel(rng, m),
        state_init=[random_gaussian(rng, d) for _ in range(m)],
        state_kernels=[random_kernel(rng, d, d) for _ in range(m)],
        obs_kernels=[random_kernel(rng, d, obs_dim) for _ in range(m)],
        horizon=horizon,
    )


def simulate_linear(rng, sys):
    x = rng.multivariate_normal(sys.init.mean, sys.init.cov)
    ys = []
    for t in range(sys.horizon + 1):
        if t > 0:
            k = sys.transitions[t - 1]
            x = rng.multivariate_normal(k.slope @ x + k.offset, k.cov)
        ko = sys.observations[t]
        ys.append(rng.multivariate_normal(ko.slope @ x + ko.offset, ko.cov))
    return ys


def simulate_jump(rng, sys):
    m = sys.n_regimes
    z = rng.choice(m, p=sys.chain_init.probs)
    x = rng.multivariate_normal(sys.state_init[z].mean, sys.state_init[z].cov)
    zs, xs, ys = [], [], []
    for t in range(sys.horizon + 1):
        if t > 0:
            k = sys.state_kernels[z]
            z = rng.choice(m, p=sys.chain_kernel.matrix[:, z])
            x = rng.multivariate_normal(k.slope @ x + k.offset, k.cov)
        zs.append(z)
        xs.append(x)
        ko = sys.obs_kernels[z]
        ys.append(rng.multivariate_normal(ko.slope @ x + ko.offset, ko.cov))
    return np.array(zs), np.array(xs), ys
