"""Structural quantities of the advertiser learning model.

Beliefs about a site's click-through rate are Beta(kappa, kappa (1 - gamma) / gamma)
and get updated with binomial clicks, so a belief is fully described by the
cumulative impressions and clicks seen at the site. The expected match of an
advertiser with a site is the belief ratio E[c] / gamma times the exponentiated
fixed effects, and the expected payoff of an x-day subscription is

    mu_check * exp(eps) / zeta * log(1 + traffic * x * zeta) - price.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

N_TENURE_BUCKETS = 12
ORACLE_IMPRESSIONS = 10**12


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a model quantity."""


def _check_probability(gamma: float, name: str = "gamma") -> None:
    if not (0.0 < gamma < 1.0):
        raise DomainError(f"{name} must lie strictly in (0, 1), got {gamma!r}")


@dataclass(frozen=True)
class AdvertiserParams:
    gamma: float
    zeta: float
    xi: float = 0.0

    def __post_init__(self):
        _check_probability(self.gamma)
        if not self.zeta > 0:
            raise DomainError(f"zeta must be positive, got {self.zeta!r}")


@dataclass(frozen=True)
class SiteParams:
    eta: float
    traffic: float

    def __post_init__(self):
        if not self.traffic > 0:
            raise DomainError(f"traffic must be positive, got {self.traffic!r}")


@dataclass(frozen=True)
class TimeEffects:
    phi: tuple[float, ...]
    psi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(float(v) for v in self.phi))
        object.__setattr__(self, "psi", tuple(float(v) for v in self.psi))
        if len(self.phi) != N_TENURE_BUCKETS:
            raise DomainError(f"phi needs {N_TENURE_BUCKETS} entries, got {len(self.phi)}")


@dataclass(frozen=True)
class BeliefState:
    """Cumulative impressions and clicks observed by one advertiser at one site."""

    impressions: int = 0
    clicks: int = 0

    def __post_init__(self):
        if self.impressions < 0 or self.clicks < 0:
            raise DomainError("belief counts must be non-negative")
        if self.clicks > self.impressions:
            raise DomainError(
                f"clicks ({self.clicks}) exceed impressions ({self.impressions})"
            )

    @classmethod
    def oracle(cls, ctr: float, impressions: int = ORACLE_IMPRESSIONS) -> "BeliefState":
        """Pseudo-count state whose posterior mean sits at ``ctr``."""
        if not (0.0 <= ctr <= 1.0):
            raise DomainError(f"ctr must lie in [0, 1], got {ctr!r}")
        return cls(impressions, math.floor(impressions * ctr))

    def update(self, new_impressions: int, new_clicks: int) -> "BeliefState":
        return update_beliefs(self, new_impressions, new_clicks)


@dataclass(frozen=True)
class SubscriptionOption:
    days: int
    price: float

    def __post_init__(self):
        if int(self.days) != self.days or self.days < 1:
            raise DomainError(f"days must be a positive integer, got {self.days!r}")
        if not self.price >= 0:
            raise DomainError(f"price must be non-negative, got {self.price!r}")


@dataclass(frozen=True)
class Menu:
    """Duration-price pairs offered by one site in one week.

    Both days and prices must be strictly increasing: the adjacent-option
    bounds take the log of price gaps, so flat segments are rejected here.
    """

    options: tuple[SubscriptionOption, ...]

    def __post_init__(self):
        opts = tuple(sorted(self.options, key=lambda o: o.days))
        object.__setattr__(self, "options", opts)
        for lo, hi in zip(opts, opts[1:]):
            if hi.days <= lo.days:
                raise DomainError(f"duplicate duration {hi.days} in menu")
            if hi.price <= lo.price:
                raise DomainError(
                    f"menu price must increase with duration: {lo.days}d costs "
                    f"{lo.price} but {hi.days}d costs {hi.price}"
                )

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "Menu":
        return cls(tuple(SubscriptionOption(int(d), float(p)) for d, p in pairs))

    @property
    def days(self) -> np.ndarray:
        return np.array([o.days for o in self.options], dtype=np.int64)

    @property
    def prices(self) -> np.ndarray:
        return np.array([o.price for o in self.options], dtype=float)

    def __len__(self) -> int:
        return len(self.options)

    def __contains__(self, days: int) -> bool:
        return any(o.days == days for o in self.options)

    def index_of(self, days: int) -> int:
        for i, o in enumerate(self.options):
            if o.days == days:
                return i
        raise KeyError(f"{days}-day option not in menu")


@dataclass(frozen=True)
class MatchContext:
    tau: int
    month: int
    epsilon: float = 0.0

    def __post_init__(self):
        if not 0 <= self.tau < N_TENURE_BUCKETS:
            raise DomainError(f"tau must be in 0..{N_TENURE_BUCKETS - 1}, got {self.tau}")


def prior_beta_params(gamma: float, kappa: float = 1.0) -> tuple[float, float]:
    """Beta parameters of the prior CTR belief with mean ``gamma``."""
    _check_probability(gamma)
    if not kappa > 0:
        raise DomainError(f"kappa must be positive, got {kappa!r}")
    return kappa, kappa * (1.0 - gamma) / gamma


def belief_ratio(state: BeliefState, gamma: float, kappa: float = 1.0) -> float:
    """Posterior mean CTR divided by the prior mean gamma."""
    _check_probability(gamma)
    return (kappa + state.clicks) / (kappa + gamma * state.impressions)


def expected_ctr(state: BeliefState, gamma: float, kappa: float = 1.0) -> float:
    return gamma * belief_ratio(state, gamma, kappa)


def update_beliefs(state: BeliefState, new_impressions: int, new_clicks: int) -> BeliefState:
    if new_impressions < 0 or new_clicks < 0:
        raise DomainError("new counts must be non-negative")
    if new_clicks > new_impressions:
        raise DomainError(
            f"new clicks ({new_clicks}) exceed new impressions ({new_impressions})"
        )
    return BeliefState(state.impressions + int(new_impressions), state.clicks + int(new_clicks))


# Upper edge (inclusive) of each tenure bucket in weeks since first ad.
# Week 52 sits in bucket 10; 53 and beyond go to bucket 11.
_TAU_EDGES = np.array([0, 1, 2, 3, 4, 6, 8, 12, 16, 32, 52])


def tau_bucket(weeks_since_first_ad: int | None) -> int:
    if weeks_since_first_ad is None:
        return 0
    if weeks_since_first_ad < 0:
        raise DomainError(f"weeks since first ad must be non-negative, got {weeks_since_first_ad}")
    return int(np.searchsorted(_TAU_EDGES, weeks_since_first_ad, side="left"))


def tau_buckets(weeks: np.ndarray) -> np.ndarray:
    """Vectorised ``tau_bucket``; negative entries mean "never advertised"."""
    weeks = np.asarray(weeks)
    out = np.searchsorted(_TAU_EDGES, np.maximum(weeks, 0), side="left")
    return np.where(weeks < 0, 0, out)


def deterministic_match(ratio: float, xi: float, eta: float, phi_tau: float, psi_m: float) -> float:
    return ratio * math.exp(xi + eta + phi_tau + psi_m)


def valuation(zeta, traffic, days):
    """Gross valuation per unit of match: log(1 + t x zeta) / zeta."""
    return np.log1p(np.multiply(traffic, days) * zeta) / zeta


def expected_payoff(mu_check: float, epsilon: float, zeta: float, traffic: float,
                    days: int, price: float) -> float:
    if days == 0:
        return 0.0 - price
    return mu_check * math.exp(epsilon) * math.log1p(traffic * days * zeta) / zeta - price


def payoff_table(scale, zeta, traffic, days: np.ndarray, prices: np.ndarray) -> np.ndarray:
    """Payoffs of the outside option and every menu entry.

    ``scale`` is mu_check * exp(eps). Returns an array whose last axis has
    length ``len(days) + 1``; entry 0 is the outside option (always 0).
    Leading axes broadcast across ``scale``, ``zeta`` and ``traffic``.
    """
    scale = np.asarray(scale, dtype=float)[..., None]
    zeta = np.asarray(zeta, dtype=float)[..., None]
    traffic = np.asarray(traffic, dtype=float)[..., None]
    paid = scale * np.log1p(traffic * days * zeta) / zeta - prices
    zeros = np.zeros(paid.shape[:-1] + (1,))
    return np.concatenate([zeros, paid], axis=-1)


def optimal_choice(menu: Menu, mu_check: float, epsilon: float, zeta: float, traffic: float) -> int:
    """Myopically optimal run length, 0 meaning no purchase.

    Ties go to the shorter duration (``argmax`` returns the first maximum).
    """
    if epsilon == -math.inf:
        return 0
    values = payoff_table(mu_check * math.exp(epsilon), zeta, traffic, menu.days, menu.prices)
    k = int(np.argmax(values))
    return 0 if k == 0 else int(menu.days[k - 1])


def choose_many(scale: np.ndarray, zeta: np.ndarray, traffic: np.ndarray,
                days: np.ndarray, prices: np.ndarray) -> np.ndarray:
    """Vectorised ``optimal_choice`` returning the chosen menu index (0 = none)."""
    return np.argmax(payoff_table(scale, zeta, traffic, days, prices), axis=-1)


def cumulative(states: Sequence[tuple[int, int]]) -> BeliefState:
    state = BeliefState()
    for imp, clk in states:
        state = update_beliefs(state, imp, clk)
    return state
