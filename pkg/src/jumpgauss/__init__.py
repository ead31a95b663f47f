"""Variational filtering and smoothing for linear-Gaussian and jump
Gauss-Markov systems, with exact Bayesian baselines and a Monte Carlo
experiment harness."""

from jumpgauss.gaussians import (
    AffineGaussianKernel,
    Categorical,
    CategoricalKernel,
    GaussianDensity,
    ImproperProductError,
    InputError,
    LogQuadraticForm,
    NumericError,
    average_log_gaussians,
    conditional_relative_entropy_likelihood,
    log_pdf,
    neg_relative_entropy,
    predict_and_reverse,
    quadratic_times_gaussian,
    set_global_jitter,
)

__all__ = [
    "AffineGaussianKernel",
    "Categorical",
    "CategoricalKernel",
    "GaussianDensity",
    "ImproperProductError",
    "InputError",
    "LogQuadraticForm",
    "NumericError",
    "average_log_gaussians",
    "conditional_relative_entropy_likelihood",
    "log_pdf",
    "neg_relative_entropy",
    "predict_and_reverse",
    "quadratic_times_gaussian",
    "set_global_jitter",
]

__version__ = "0.1.0"
