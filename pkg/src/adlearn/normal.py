"""Numerically stable normal-distribution helpers.

Interval probabilities are evaluated in log space on whichever side of zero
keeps both CDF values away from 1, so that tails far out (|z| ~ 30) keep full
relative precision.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtri, ndtri_exp

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def log1mexp(x):
    """log(1 - exp(x)) for x <= 0 (Maechler's switch at -log 2)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > -np.log(2.0), np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def log_ndtr_diff(a, b):
    """log(Phi(b) - Phi(a)), elementwise; -inf where b <= a.

    When both limits are positive the complementary form
    Phi(-a) - Phi(-b) is used instead.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = log_ndtr(hi)
    log_lo = log_ndtr(lo)
    with np.errstate(invalid="ignore"):
        out = log_hi + log1mexp(log_lo - log_hi)
    out = np.where(b > a, out, -np.inf)
    return np.where(np.isnan(out), -np.inf, out)


def log_norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return -0.5 * z * z - LOG_SQRT_2PI


def truncated_normal_ppf(u, lower, upper, sigma=1.0):
    """Quantile ``u`` of N(0, sigma^2) restricted to (lower, upper).

    Works in log space on the lower tail; intervals lying in the upper tail
    are mirrored first. Degenerate intervals (upper <= lower) return the
    lower limit, or the upper one when lower is -inf.
    """
    u, lower, upper, sigma = np.broadcast_arrays(
        np.asarray(u, dtype=float),
        np.asarray(lower, dtype=float),
        np.asarray(upper, dtype=float),
        np.asarray(sigma, dtype=float),
    )
    a = lower / sigma
    b = upper / sigma
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    uu = np.where(flip, 1.0 - u, u)
    log_lo = log_ndtr(lo)
    log_hi = log_ndtr(hi)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        # log Phi(z) = log Phi(lo) + log1p(u (Phi(hi)/Phi(lo) - 1)), rewritten
        # around the larger endpoint to avoid overflow of the ratio.
        log_target = log_hi + np.log(
            uu + (1.0 - uu) * np.exp(log_lo - log_hi)
        )
        z = ndtri_exp(np.minimum(log_target, 0.0))
    z = np.clip(z, lo, hi)
    z = np.where(flip, -z, z)
    bad = ~(b > a)
    z = np.where(bad, np.where(np.isfinite(a), a, b), z)
    return z * sigma


def normal_ppf(u, sigma=1.0):
    return ndtri(np.asarray(u, dtype=float)) * sigma
