"""Hierarchical priors.

* fixed effects xi, eta, phi, psi: Student-t, 4 df, mean 0, unit variance
* sigma ~ Exponential(log 10), so Pr[sigma > 1] = 0.1
* zeta_a - 0.01 | zeta_bar ~ Exponential(mean zeta_bar)
* zeta_bar ~ Exponential(rate log(10) / 10), so Pr[zeta_bar > 10] = 0.1
* g_a ~ Exponential(1), gamma_bar ~ Exponential(rate log(10) / 0.002)
* gamma_a = g_a / (1 / gamma_bar + g_a)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ..model import DomainError
from ..theta import ParamLayout, ThetaDraw, from_unconstrained, log_abs_det_jacobian


def pc_exponential_rate(upper: float, tail_prob: float) -> float:
    """Rate r of an exponential prior with Pr[X > upper] = tail_prob."""
    return -math.log(tail_prob) / upper


@dataclass(frozen=True)
class PriorConfig:
    t_df: float = 4.0
    t_scale: float = math.sqrt(0.5)  # unit variance at 4 df
    sigma_rate: float = pc_exponential_rate(1.0, 0.1)
    zeta_bar_rate: float = pc_exponential_rate(10.0, 0.1)
    g_rate: float = 1.0
    gamma_bar_rate: float = pc_exponential_rate(0.002, 0.1)


def _student_t(x: np.ndarray, df: float, scale: float) -> tuple[float, np.ndarray]:
    const = (gammaln((df + 1) / 2) - gammaln(df / 2)
             - 0.5 * math.log(df * math.pi) - math.log(scale))
    q = 1.0 + (x / scale) ** 2 / df
    logp = x.size * const - 0.5 * (df + 1) * np.sum(np.log(q))
    grad = -(df + 1) * x / (df * scale**2 + x**2)
    return float(logp), grad


def _exponential(x, rate) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(math.log(rate) - rate * x))


def log_prior(theta: ThetaDraw, config: PriorConfig = PriorConfig()) -> float:
    """Prior density of (g, gamma_bar, zeta, zeta_bar, sigma, fixed effects).

    Evaluated on the natural scale, without Jacobian terms.
    """
    theta.validate()
    shift = theta.layout.zeta_shift if theta.layout else 0.01
    lp = 0.0
    for eff in (theta.xi, theta.eta, theta.phi, theta.psi):
        lp += _student_t(np.asarray(eff, dtype=float), config.t_df, config.t_scale)[0]
    lp += _exponential(theta.sigma, config.sigma_rate)
    lp += _exponential(np.asarray(theta.zeta) - shift, 1.0 / theta.zeta_bar)
    lp += _exponential(theta.zeta_bar, config.zeta_bar_rate)
    lp += _exponential(theta.g, config.g_rate)
    lp += _exponential(theta.gamma_bar, config.gamma_bar_rate)
    return lp


def log_prior_unconstrained(u: np.ndarray, layout: ParamLayout,
                            config: PriorConfig = PriorConfig()) -> tuple[float, np.ndarray]:
    """Prior log density of the unconstrained vector (Jacobian included) and gradient."""
    sl = layout.slices
    grad = np.zeros(layout.dim)
    lp = 0.0
    for key in ("xi", "eta", "phi", "psi"):
        v, g = _student_t(u[sl[key]], config.t_df, config.t_scale)
        lp += v
        grad[sl[key]] = g

    log_sigma = u[sl["log_sigma"]][0]
    sigma = float(np.exp(log_sigma))
    lp += math.log(config.sigma_rate) - config.sigma_rate * sigma
    grad[sl["log_sigma"]] = -config.sigma_rate * sigma

    log_zb = u[sl["log_zeta_bar"]][0]
    zb = float(np.exp(log_zb))
    excess = np.exp(u[sl["log_zeta_excess"]])
    lp += -layout.n_advertisers * log_zb - excess.sum() / zb
    grad[sl["log_zeta_excess"]] = -excess / zb
    lp += math.log(config.zeta_bar_rate) - config.zeta_bar_rate * zb
    grad[sl["log_zeta_bar"]] = -layout.n_advertisers + excess.sum() / zb - config.zeta_bar_rate * zb

    g = np.exp(u[sl["log_g"]])
    lp += layout.n_advertisers * math.log(config.g_rate) - config.g_rate * g.sum()
    grad[sl["log_g"]] = -config.g_rate * g

    gb = float(np.exp(u[sl["log_gamma_bar"]][0]))
    lp += math.log(config.gamma_bar_rate) - config.gamma_bar_rate * gb
    grad[sl["log_gamma_bar"]] = -config.gamma_bar_rate * gb

    jac, jac_grad = log_abs_det_jacobian(u, layout)
    return lp + jac, grad + jac_grad


def sample_prior(rng: np.random.Generator, layout: ParamLayout,
                 config: PriorConfig = PriorConfig()) -> ThetaDraw:
    """One draw of the full parameter vector from the prior."""
    A, S, M = layout.n_advertisers, layout.n_sites, layout.n_months
    zeta_bar = rng.exponential(1.0 / config.zeta_bar_rate)
    gamma_bar = rng.exponential(1.0 / config.gamma_bar_rate)

    def t(n):
        return config.t_scale * rng.standard_t(config.t_df, size=n)

    return ThetaDraw.from_hierarchy(
        g=rng.exponential(1.0 / config.g_rate, size=A),
        gamma_bar=gamma_bar,
        zeta=layout.zeta_shift + rng.exponential(zeta_bar, size=A),
        xi=t(A), eta=t(S), phi=t(12), psi=t(M),
        sigma=rng.exponential(1.0 / config.sigma_rate),
        zeta_bar=zeta_bar, layout=layout,
    )


def check_domain(u: np.ndarray, layout: ParamLayout) -> ThetaDraw:
    if not np.all(np.isfinite(u)):
        raise DomainError("unconstrained vector has non-finite entries")
    return from_unconstrained(u, layout)
