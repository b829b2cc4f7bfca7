"""Interval-censored choice likelihood.

An observed run length x is rationalised by the shocks eps for which x beats
its neighbours on the menu: the next-shorter option (or not buying at all)
gives a lower bound, the next-longer option an upper bound. With
eps ~ N(0, sigma^2) the observation probability is
Phi(ub / sigma) - Phi(lb / sigma).

``ChoiceData`` holds a whole dataset as flat arrays; the scalar helpers
(``compute_bounds``, ``obs_log_prob``) exist for inspection and testing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy.special import log_ndtr

from .model import BeliefState, DomainError, Menu, N_TENURE_BUCKETS
from .normal import log_ndtr_diff, log_norm_pdf
from .theta import ParamLayout, ThetaDraw

DEFAULT_FLOOR = 1e-300


@dataclass(frozen=True)
class ChoiceObservation:
    advertiser: Hashable
    site: Hashable
    week: int
    chosen_days: int
    menu: Menu
    belief: BeliefState
    tau: int
    month: Hashable

    def __post_init__(self):
        if self.chosen_days != 0 and self.chosen_days not in self.menu:
            raise DomainError(
                f"chosen duration {self.chosen_days} not offered on the menu "
                f"(advertiser {self.advertiser}, site {self.site}, week {self.week})"
            )
        if not 0 <= self.tau < N_TENURE_BUCKETS:
            raise DomainError(f"tau out of range: {self.tau}")


@dataclass(frozen=True)
class EpsilonBounds:
    lower: float
    upper: float


@dataclass
class FloorCounter:
    """Running tally of observations whose probability hit the floor."""

    hits: int = 0
    evaluations: int = 0

    def add(self, hits: int, evaluations: int = 1) -> None:
        self.hits += int(hits)
        self.evaluations += int(evaluations)


def _neighbours(menu: Menu, chosen_days: int):
    """(days, price) of the next-shorter and next-longer alternatives.

    The outside option (0 days, price 0) is the shorter neighbour of the
    shortest paid option. Missing neighbours come back as None.
    """
    days = [0] + [o.days for o in menu.options]
    prices = [0.0] + [o.price for o in menu.options]
    k = days.index(chosen_days)
    lower = (days[k - 1], prices[k - 1]) if k > 0 else None
    upper = (days[k + 1], prices[k + 1]) if k + 1 < len(days) else None
    return prices[k], lower, upper


def _log_valuation_gap(traffic, zeta, x_hi, x_lo):
    """log of log((t x_hi zeta + 1) / (t x_lo zeta + 1))."""
    gap = np.log1p(traffic * zeta * (x_hi - x_lo) / (1.0 + traffic * x_lo * zeta))
    return np.log(gap)


def compute_bounds(obs: ChoiceObservation, *, gamma: float, zeta: float, xi: float,
                   eta: float, phi_tau: float, psi_m: float, traffic: float,
                   kappa: float = 1.0) -> EpsilonBounds:
    ratio = (kappa + obs.belief.clicks) / (kappa + gamma * obs.belief.impressions)
    log_mu = math.log(ratio) + xi + eta + phi_tau + psi_m
    price, lower, upper = _neighbours(obs.menu, obs.chosen_days)
    x = obs.chosen_days
    lb = -math.inf
    ub = math.inf
    if lower is not None:
        x_dn, p_dn = lower
        lb = (math.log(price - p_dn) - log_mu + math.log(zeta)
              - float(_log_valuation_gap(traffic, zeta, x, x_dn)))
    if upper is not None:
        x_up, p_up = upper
        ub = (math.log(p_up - price) - log_mu + math.log(zeta)
              - float(_log_valuation_gap(traffic, zeta, x_up, x)))
    return EpsilonBounds(lb, ub)


def obs_log_prob(bounds: EpsilonBounds, sigma: float, floor: float = DEFAULT_FLOOR,
                 counter: FloorCounter | None = None) -> float:
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma!r}")
    value = float(log_ndtr_diff(bounds.lower / sigma, bounds.upper / sigma))
    log_floor = math.log(floor)
    hit = not value > log_floor
    if counter is not None:
        counter.add(hit)
    return log_floor if hit else value


@dataclass
class ChoiceData:
    """A choice dataset flattened to per-observation arrays.

    Prices only ever enter through log price gaps, so those are stored
    instead of the menus themselves.
    """

    layout: ParamLayout
    adv: np.ndarray
    site: np.ndarray
    tau: np.ndarray
    month: np.ndarray
    clicks: np.ndarray
    impressions: np.ndarray
    traffic: np.ndarray
    x: np.ndarray
    x_dn: np.ndarray
    x_up: np.ndarray
    log_dp_lo: np.ndarray
    log_dp_up: np.ndarray
    has_lo: np.ndarray
    has_up: np.ndarray
    kappa: float = 1.0
    floor: float = DEFAULT_FLOOR
    weeks: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.adv)

    @classmethod
    def from_observations(cls, observations: Sequence[ChoiceObservation],
                          traffic: Mapping[Hashable, float], layout: ParamLayout,
                          kappa: float = 1.0, floor: float = DEFAULT_FLOOR) -> "ChoiceData":
        a_idx = {a: i for i, a in enumerate(layout.advertiser_ids)}
        s_idx = {s: i for i, s in enumerate(layout.site_ids)}
        m_idx = {m: i for i, m in enumerate(layout.months)}
        n = len(observations)
        cols = {k: np.zeros(n) for k in ("clicks", "impressions", "traffic", "x", "x_dn",
                                         "x_up", "log_dp_lo", "log_dp_up")}
        ints = {k: np.zeros(n, dtype=np.int64) for k in ("adv", "site", "tau", "month", "weeks")}
        has_lo = np.zeros(n, dtype=bool)
        has_up = np.zeros(n, dtype=bool)
        for i, ob in enumerate(observations):
            ints["adv"][i] = a_idx[ob.advertiser]
            ints["site"][i] = s_idx[ob.site]
            ints["tau"][i] = ob.tau
            ints["month"][i] = m_idx[ob.month]
            ints["weeks"][i] = ob.week
            cols["clicks"][i] = ob.belief.clicks
            cols["impressions"][i] = ob.belief.impressions
            cols["traffic"][i] = traffic[ob.site]
            price, lower, upper = _neighbours(ob.menu, ob.chosen_days)
            cols["x"][i] = ob.chosen_days
            if lower is not None:
                has_lo[i] = True
                cols["x_dn"][i] = lower[0]
                cols["log_dp_lo"][i] = math.log(price - lower[1])
            if upper is not None:
                has_up[i] = True
                cols["x_up"][i] = upper[0]
                cols["log_dp_up"][i] = math.log(upper[1] - price)
        return cls(layout=layout, has_lo=has_lo, has_up=has_up, kappa=kappa, floor=floor,
                   **ints, **cols)

    def subset(self, index) -> "ChoiceData":
        arrays = {k: getattr(self, k)[index] for k in (
            "adv", "site", "tau", "month", "clicks", "impressions", "traffic", "x", "x_dn",
            "x_up", "log_dp_lo", "log_dp_up", "has_lo", "has_up", "weeks")}
        return ChoiceData(layout=self.layout, kappa=self.kappa, floor=self.floor, **arrays)


@dataclass
class _EvalPlan:
    """Data-only quantities reused by every likelihood evaluation."""

    log_kc: np.ndarray        # log(kappa + clicks)
    u_adv: np.ndarray         # unique (adv, traffic, x, x_dn, x_up) rows
    u_traffic: np.ndarray
    u_x: np.ndarray
    u_x_dn: np.ndarray
    u_x_up: np.ndarray
    inverse: np.ndarray       # observation -> unique row
    up_only: np.ndarray       # index sets by which bounds are finite
    lo_only: np.ndarray
    both: np.ndarray


def _plan(data: ChoiceData) -> _EvalPlan:
    plan = data.__dict__.get("_plan")
    if plan is None:
        keys = np.column_stack([data.adv.astype(float), data.traffic, data.x, data.x_dn, data.x_up])
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        plan = _EvalPlan(
            log_kc=np.log(data.kappa + data.clicks),
            u_adv=uniq[:, 0].astype(np.int64), u_traffic=uniq[:, 1], u_x=uniq[:, 2],
            u_x_dn=uniq[:, 3], u_x_up=uniq[:, 4], inverse=inverse.ravel(),
            up_only=np.flatnonzero(~data.has_lo & data.has_up),
            lo_only=np.flatnonzero(data.has_lo & ~data.has_up),
            both=np.flatnonzero(data.has_lo & data.has_up))
        data.__dict__["_plan"] = plan
    return plan


def _log_match(data: ChoiceData, theta: ThetaDraw):
    gamma = theta.gamma[data.adv]
    denom = data.kappa + gamma * data.impressions
    log_mu = (_plan(data).log_kc - np.log(denom) + theta.xi[data.adv]
              + theta.eta[data.site] + theta.phi[data.tau] + theta.psi[data.month])
    return log_mu, gamma, denom


def _zeta_terms_raw(t, x, x_dn, x_up, zeta):
    with np.errstate(divide="ignore", invalid="ignore"):
        d_lo = np.log1p(t * zeta * (x - x_dn) / (1.0 + t * x_dn * zeta))
        d_up = np.log1p(t * zeta * (x_up - x) / (1.0 + t * x * zeta))
        log_zeta = np.log(zeta)
        h_lo = log_zeta - np.log(d_lo)
        h_up = log_zeta - np.log(d_up)
        dd_lo = t * (x - x_dn) / ((1.0 + t * x * zeta) * (1.0 + t * x_dn * zeta))
        dd_up = t * (x_up - x) / ((1.0 + t * x_up * zeta) * (1.0 + t * x * zeta))
        dh_lo = 1.0 / zeta - dd_lo / d_lo
        dh_up = 1.0 / zeta - dd_up / d_up
    return h_lo, h_up, dh_lo, dh_up


def _zeta_terms(data: ChoiceData, zeta: np.ndarray):
    """log zeta - log D for both bounds, and their derivatives in zeta.

    ``zeta`` is per advertiser; terms are computed once per distinct
    (advertiser, traffic, menu neighbours) row and gathered.
    """
    plan = _plan(data)
    terms = _zeta_terms_raw(plan.u_traffic, plan.u_x, plan.u_x_dn, plan.u_x_up, zeta[plan.u_adv])
    return tuple(v[plan.inverse] for v in terms)


def _bounds(data: ChoiceData, theta: ThetaDraw):
    log_mu, gamma, denom = _log_match(data, theta)
    h_lo, h_up, dh_lo, dh_up = _zeta_terms(data, theta.zeta)
    lb = np.where(data.has_lo, data.log_dp_lo - log_mu + h_lo, -np.inf)
    ub = np.where(data.has_up, data.log_dp_up - log_mu + h_up, np.inf)
    return lb, ub, denom, dh_lo, dh_up


def _log_interval_prob(data: ChoiceData, z_lo: np.ndarray, z_up: np.ndarray) -> np.ndarray:
    """log(Phi(z_up) - Phi(z_lo)), specialised by which bounds are finite."""
    plan = _plan(data)
    out = np.zeros(len(z_lo))
    out[plan.up_only] = log_ndtr(z_up[plan.up_only])
    out[plan.lo_only] = log_ndtr(-z_lo[plan.lo_only])
    out[plan.both] = log_ndtr_diff(z_lo[plan.both], z_up[plan.both])
    return np.where(np.isnan(out), -np.inf, out)


def bounds_arrays(data: ChoiceData, theta: ThetaDraw):
    """Vectorised ``compute_bounds``: arrays of lower and upper shock bounds."""
    lb, ub, _, _, _ = _bounds(data, theta)
    return lb, ub


def pointwise_loglik(data: ChoiceData, theta: ThetaDraw,
                     counter: FloorCounter | None = None) -> np.ndarray:
    lb, ub = bounds_arrays(data, theta)
    logp = _log_interval_prob(data, lb / theta.sigma, ub / theta.sigma)
    log_floor = math.log(data.floor)
    floored = ~(logp > log_floor)
    if counter is not None:
        counter.add(int(floored.sum()), len(logp))
    return np.where(floored, log_floor, logp)


def _reduce(values: np.ndarray, reduction: str) -> float:
    if len(values) == 0:
        return 0.0
    if reduction == "ordered":
        return float(np.cumsum(values)[-1])
    if reduction == "pairwise":
        return float(np.sum(values))
    raise ValueError(f"unknown reduction {reduction!r}")


def dataset_log_likelihood(data: ChoiceData, theta: ThetaDraw, reduction: str = "pairwise",
                           counter: FloorCounter | None = None) -> float:
    """Sum of per-observation log probabilities.

    ``reduction="ordered"`` accumulates strictly left to right, matching a
    plain Python loop bit for bit; ``"pairwise"`` uses numpy's summation.
    """
    return _reduce(pointwise_loglik(data, theta, counter), reduction)


def loglik_and_grad(data: ChoiceData, theta: ThetaDraw,
                    counter: FloorCounter | None = None) -> tuple[float, np.ndarray]:
    """Log-likelihood and its gradient in the unconstrained coordinates."""
    layout = data.layout
    sigma = theta.sigma
    lb, ub, denom, dh_lo, dh_up = _bounds(data, theta)
    z_lo = lb / sigma
    z_up = ub / sigma
    logp = _log_interval_prob(data, z_lo, z_up)
    log_floor = math.log(data.floor)
    floored = ~(logp > log_floor)
    if counter is not None:
        counter.add(int(floored.sum()), len(logp))
    logp = np.where(floored, log_floor, logp)
    total = float(np.sum(logp))

    live_lo = data.has_lo & ~floored
    live_up = data.has_up & ~floored
    with np.errstate(invalid="ignore", over="ignore"):
        r_lo = np.where(live_lo, np.exp(log_norm_pdf(z_lo) - logp), 0.0)
        r_up = np.where(live_up, np.exp(log_norm_pdf(z_up) - logp), 0.0)
        zr_lo = np.where(live_lo, z_lo * r_lo, 0.0)
        zr_up = np.where(live_up, z_up * r_up, 0.0)
    g_lb = -r_lo / sigma
    g_ub = r_up / sigma
    g_sigma = (zr_lo - zr_up) / sigma
    g_logmu = -(g_lb + g_ub)
    g_zeta = np.where(live_lo, g_lb * dh_lo, 0.0) + np.where(live_up, g_ub * dh_up, 0.0)
    g_gamma = g_logmu * (-data.impressions / denom)

    A, S, M = layout.n_advertisers, layout.n_sites, layout.n_months
    sl = layout.slices
    grad = np.zeros(layout.dim)
    dgamma_a = np.bincount(data.adv, g_gamma, minlength=A) * theta.gamma * (1.0 - theta.gamma)
    grad[sl["log_g"]] = dgamma_a
    grad[sl["log_gamma_bar"]] = dgamma_a.sum()
    grad[sl["log_zeta_excess"]] = (np.bincount(data.adv, g_zeta, minlength=A)
                                   * (theta.zeta - layout.zeta_shift))
    grad[sl["xi"]] = np.bincount(data.adv, g_logmu, minlength=A)
    grad[sl["eta"]] = np.bincount(data.site, g_logmu, minlength=S)
    grad[sl["phi"]] = np.bincount(data.tau, g_logmu, minlength=N_TENURE_BUCKETS)
    grad[sl["psi"]] = np.bincount(data.month, g_logmu, minlength=M)
    grad[sl["log_sigma"]] = g_sigma.sum() * sigma
    return total, grad


def grad_dataset_log_likelihood(data: ChoiceData, theta: ThetaDraw) -> np.ndarray:
    return loglik_and_grad(data, theta)[1]


def pointwise_loglik_matrix(data: ChoiceData, draws: Sequence[ThetaDraw]) -> np.ndarray:
    if len(draws) == 0:
        raise DomainError("need at least one posterior draw")
    return np.vstack([pointwise_loglik(data, d) for d in draws])


def write_pointwise_csv(path, matrix: np.ndarray, header: str | None = None) -> None:
    """Long-format export with columns ``draw,obs_index,loglik``."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header.rstrip("\n") + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw", "obs_index", "loglik"])
        for d, row in enumerate(np.asarray(matrix)):
            for i, v in enumerate(row):
                w.writerow([d, i, format(float(v), ".17g")])


def read_pointwise_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    if header != ["draw", "obs_index", "loglik"]:
        raise ValueError(f"unexpected header {header}")
    n_draws = 1 + max(int(r[0]) for r in body) if body else 0
    n_obs = 1 + max(int(r[1]) for r in body) if body else 0
    out = np.full((n_draws, n_obs), np.nan)
    for d, i, v in body:
        out[int(d), int(i)] = float(v)
    return out
