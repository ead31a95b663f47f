"""Variational filtering and smoothing for jump Gauss-Markov systems."""

from jumpgauss.vjgm.drivers import (
    VjgmFilterResult,
    VjgmPosterior,
    available_backends,
    backward_marginals,
    collapsed_filter,
    elbo,
    fixed_point_smoother,
    get_backend,
    load_posterior,
    posterior_from_dict,
    posterior_to_dict,
    save_posterior,
    set_backend,
    suboptimal_filter,
)
from jumpgauss.vjgm.steps import (
    ForwardRepresenter,
    ProductMarginal,
    ReverseKernelPair,
    chain_predict,
    filter_update,
    h_dagger,
    joint_predict_reverse,
    mix_joint,
    reverse_kernel_update,
    value_update,
    zeta_dagger,
)

__all__ = [
    "ForwardRepresenter",
    "ProductMarginal",
    "ReverseKernelPair",
    "VjgmFilterResult",
    "VjgmPosterior",
    "available_backends",
    "backward_marginals",
    "chain_predict",
    "collapsed_filter",
    "elbo",
    "filter_update",
    "fixed_point_smoother",
    "get_backend",
    "h_dagger",
    "joint_predict_reverse",
    "load_posterior",
    "mix_joint",
    "posterior_from_dict",
    "posterior_to_dict",
    "reverse_kernel_update",
    "save_posterior",
    "set_backend",
    "suboptimal_filter",
    "value_update",
    "zeta_dagger",
]
