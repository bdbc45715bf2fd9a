"""Bayesian privacy metrics, theorem checks, gradient-inversion attacks and estimators."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DivergenceError,
    DomainBoundError,
    EstimationError,
    KernelFormatError,
    ParameterError,
    PrivRobustError,
    UndefinedPosteriorError,
)
from .mechanism import (
    DiscreteDistribution,
    GradientPerturbation,
    StochasticKernel,
    load_kernel,
    make_constant_mechanism,
    make_identity,
    make_randomized_response,
    random_kernel,
    sample_output,
)
from .metrics import (
    abp_epsilon,
    c1,
    c2,
    eps_tilde,
    js_divergence,
    kl_divergence,
    ldp_epsilon,
    mbp_xi,
    mbp_xi_sup,
    posterior,
    posterior_mixture,
    prior_mismatch_eps,
    privacy_report,
    tv_distance,
)
from .verify import BoundCheck
