"""Gaussian expectation propagation for Bayesian GLMs with spherical priors."""

from .engine import (
    Dataset,
    EPConfig,
    EPResult,
    EPState,
    NegativeCavityVariance,
    Prior,
    SiteDelta,
    apply_site_update,
    cavity_dense,
    cavity_lowrank,
    choose_kernel,
    finalize,
    log_marginal,
    run_ep,
)
from .hybrid import (
    CavityProjection,
    InvalidTiltedVariance,
    ModelSpec,
    QuadratureError,
    TiltedSummary,
    tilted_gamma,
    tilted_logit,
    tilted_poisson,
    tilted_probit,
    tilted_quadrature,
    tilted_to_site,
)

__version__ = "0.1.0"
