from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..likelihood import ChoiceData, FloorCounter, loglik_and_grad
from ..theta import ParamLayout, ThetaDraw, from_unconstrained
from .priors import PriorConfig, log_prior_unconstrained


@dataclass
class Posterior:
    """Log posterior over the unconstrained vector, with gradient.

    Instances are callables ``u -> (log density, gradient)`` and pickle
    cleanly, so chains can run in worker processes.
    """

    data: ChoiceData | None
    layout: ParamLayout
    priors: PriorConfig = field(default_factory=PriorConfig)
    counter: FloorCounter = field(default_factory=FloorCounter)

    @property
    def dim(self) -> int:
        return self.layout.dim

    def theta(self, u: np.ndarray) -> ThetaDraw:
        return from_unconstrained(u, self.layout)

    def __call__(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        return log_posterior_and_grad(u, self.data, self.layout, self.priors, self.counter)


def log_posterior_and_grad(u: np.ndarray, data: ChoiceData | None, layout: ParamLayout,
                           priors: PriorConfig = PriorConfig(),
                           counter: FloorCounter | None = None) -> tuple[float, np.ndarray]:
    """log prior + Jacobian + log likelihood at ``u``.

    A non-finite input or intermediate value yields ``(-inf, nan-gradient)``;
    samplers treat that as a divergent, rejected evaluation.
    """
    u = np.asarray(u, dtype=float)
    bad = (-math.inf, np.full(layout.dim, np.nan))
    if not np.all(np.isfinite(u)):
        return bad
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        lp, grad = log_prior_unconstrained(u, layout, priors)
        if data is not None and len(data):
            theta = from_unconstrained(u, layout)
            if not (np.all(np.isfinite(theta.zeta)) and math.isfinite(theta.sigma)
                    and theta.sigma > 0):
                return bad
            ll, g_ll = loglik_and_grad(data, theta, counter)
            lp += ll
            grad = grad + g_ll
    if not (math.isfinite(lp) and np.all(np.isfinite(grad))):
        return bad
    return lp, grad
