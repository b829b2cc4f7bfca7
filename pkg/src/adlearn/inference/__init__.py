"""Priors, posterior, sampling, optimisation and diagnostics."""

from .diagnostics import ChainDiagnostics, diagnostics
from .hmc import SamplerConfig, SamplerFailure, SamplerResult, hmc_sample
from .optimize import MapResult, map_estimate
from .posterior import Posterior, log_posterior_and_grad
from .priors import PriorConfig, log_prior, log_prior_unconstrained, sample_prior

__all__ = [
    "ChainDiagnostics", "diagnostics", "SamplerConfig", "SamplerFailure", "SamplerResult",
    "hmc_sample", "MapResult", "map_estimate", "Posterior", "log_posterior_and_grad",
    "PriorConfig", "log_prior", "log_prior_unconstrained", "sample_prior",
]
