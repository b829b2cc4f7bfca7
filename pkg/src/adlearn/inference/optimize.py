"""Posterior mode by L-BFGS."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from ..model import DomainError

log = logging.getLogger(__name__)


@dataclass
class MapResult:
    u: np.ndarray
    log_density: float
    grad_norm: float
    converged: bool
    iterations: int
    message: str


def map_estimate(target, start: np.ndarray, gtol: float = 1e-6,
                 max_iter: int = 5000) -> MapResult:
    """Maximise ``target(u) -> (log density, gradient)`` from ``start``.

    Non-convergence is not an exception: the last iterate is returned with
    ``converged=False`` and the optimiser's message.
    """
    start = np.asarray(start, dtype=float)
    if not np.all(np.isfinite(start)):
        raise DomainError("start point must be finite")

    def neg(u):
        lp, g = target(u)
        if not np.isfinite(lp):
            return np.inf, np.zeros_like(u)
        return -lp, -np.asarray(g)

    res = minimize(neg, start, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": gtol, "ftol": 0.0, "maxcor": 20})
    lp, g = target(res.x)
    gnorm = float(np.max(np.abs(g))) if np.all(np.isfinite(g)) else np.inf
    converged = bool(gnorm <= gtol)
    if not converged:
        log.warning("MAP did not reach gradient tolerance: |g|=%.3g (%s)", gnorm, res.message)
    return MapResult(res.x, float(lp), gnorm, converged, int(res.nit), str(res.message))
