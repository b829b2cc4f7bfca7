"""Synthetic markets and the counterfactual simulation engine.

One weekly engine serves both purposes. Each week every advertiser revisits
each site in its choice set that is not blocked by a running subscription,
picks the payoff-maximising run length (or nothing), receives round(t x)
impressions and binomial clicks, and updates its beta-binomial belief.

Random inputs are uniform arrays keyed by (master seed, stream, draw), so
paired baseline and counterfactual runs for the same posterior draw see the
same shock and click uniforms at every (advertiser, site, week).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import binom

from .likelihood import ChoiceData, bounds_arrays
from .model import ORACLE_IMPRESSIONS, BeliefState, DomainError, tau_buckets
from .normal import truncated_normal_ppf
from .panel import (MarketPanel, PurchasePanel, Decisions, block_weeks, build_choice_data,
                    month_labels_for_weeks, replay_decisions)
from .theta import ThetaDraw

log = logging.getLogger(__name__)

REGIMES = ("B", "C_F", "C_P", "C_FP")
_STREAMS = {"data_eps": 1, "data_clicks": 2, "eps": 3, "clicks": 4, "bootstrap": 5}


def keyed_uniforms(seed: int, stream: str, draw: int, shape) -> np.ndarray:
    """Uniforms on the open interval (0, 1) keyed by (seed, stream, draw).

    Element (a, s, w) depends only on the key and the array shape, never on
    which runs consume it or in what order.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAMS[stream], draw]))
    return (rng.integers(0, 2**53, size=shape, dtype=np.int64) + 0.5) / 2.0**53


# ---------------------------------------------------------------------------
# engine


@dataclass
class SimOutcome:
    """Everything that happened in one simulated run, on the (A, S, W) grid."""

    decided: np.ndarray
    k: np.ndarray
    days: np.ndarray
    price_cents: np.ndarray
    impressions: np.ndarray
    clicks: np.ndarray
    tau: np.ndarray
    epsilon: np.ndarray
    final_imp: np.ndarray
    final_clk: np.ndarray

    def spend_cents(self) -> np.ndarray:
        """Per-advertiser spend in integer cents."""
        return self.price_cents.sum(axis=(1, 2))

    def revenue_cents(self) -> np.ndarray:
        """Per-site revenue in integer cents."""
        return self.price_cents.sum(axis=(0, 2))

    def total_spend(self) -> Decimal:
        return Decimal(int(self.spend_cents().sum())) / 100

    def total_revenue(self) -> Decimal:
        return Decimal(int(self.revenue_cents().sum())) / 100

    def purchases(self) -> PurchasePanel:
        return PurchasePanel(self.k.copy(), self.impressions.copy(), self.clicks.copy(),
                             self.price_cents.copy())


def valuation_table(panel: MarketPanel, zeta: np.ndarray) -> np.ndarray:
    """log(1 + t x zeta) / zeta for every (advertiser, site, duration)."""
    z = np.asarray(zeta, dtype=float)[:, None, None]
    tx = panel.traffic[None, :, None] * panel.durations[None, None, :]
    return np.log1p(tx * z) / z


def simulate_path(panel: MarketPanel, theta: ThetaDraw, eps: np.ndarray, click_ctr: np.ndarray,
                  click_u: np.ndarray, init_imp: np.ndarray, init_clk: np.ndarray,
                  choice_mask: np.ndarray, kappa: float = 1.0,
                  price_cents: np.ndarray | None = None) -> SimOutcome:
    """Run the weekly choice loop once.

    ``eps`` holds the shock for every (a, s, w); only entries at decision
    points are read. Clicks are ``binom.ppf(click_u, impressions, ctr)``.
    """
    A, S, W = panel.shape
    if price_cents is None:
        price_cents = panel.price_cents()
    prices = price_cents / 100.0
    V = valuation_table(panel, theta.zeta)
    imp_per = np.round(panel.traffic[:, None] * panel.durations[None, :]).astype(np.int64)
    base = theta.xi[:, None] + theta.eta[None, :]
    month = panel.month_param_index()
    gamma = theta.gamma[:, None]
    join = panel.join_week[:, None]
    a_grid, s_grid = np.meshgrid(np.arange(A), np.arange(S), indexing="ij")

    imp = init_imp.astype(np.int64).copy()
    clk = init_clk.astype(np.int64).copy()
    first = np.full((A, S), -1)
    next_ok = np.zeros((A, S), dtype=np.int64)
    shape = (A, S, W)
    out = SimOutcome(np.zeros(shape, bool), np.zeros(shape, np.int64), np.zeros(shape, np.int64),
                     np.zeros(shape, np.int64), np.zeros(shape, np.int64),
                     np.zeros(shape, np.int64), np.zeros(shape, np.int64),
                     np.full(shape, np.nan), imp, clk)
    for w in range(W):
        active = choice_mask & (w >= join) & (next_ok <= w)
        if not active.any():
            continue
        ratio = (kappa + clk) / (kappa + gamma * imp)
        tau = tau_buckets(np.where(first >= 0, w - first, -1))
        e = np.where(active, eps[:, :, w], 0.0)
        with np.errstate(over="ignore"):
            scale = ratio * np.exp(base + theta.phi[tau] + theta.psi[month[w]] + e)
            vals = scale[..., None] * V - prices[None, :, w, :]
        vals = np.where(panel.avail[None, :, w, :], vals, -np.inf)
        vals = np.concatenate([np.zeros((A, S, 1)), vals], axis=2)
        k = np.where(active, np.argmax(vals, axis=2), 0)

        out.decided[:, :, w] = active
        out.tau[:, :, w] = np.where(active, tau, 0)
        out.epsilon[:, :, w] = np.where(active, eps[:, :, w], np.nan)
        bought = k > 0
        if not bought.any():
            continue
        a_b, s_b = a_grid[bought], s_grid[bought]
        kk = k[bought] - 1
        n_imp = imp_per[s_b, kk]
        p = click_ctr[a_b, s_b]
        if not np.all(np.isfinite(p)):
            raise DomainError("click-through rate missing for a pair in the choice set")
        n_clk = binom.ppf(click_u[a_b, s_b, w], n_imp, p).astype(np.int64)
        days = panel.durations[kk]
        out.k[a_b, s_b, w] = kk + 1
        out.days[a_b, s_b, w] = days
        out.price_cents[a_b, s_b, w] = price_cents[s_b, w, kk]
        out.impressions[a_b, s_b, w] = n_imp
        out.clicks[a_b, s_b, w] = n_clk
        imp[a_b, s_b] += n_imp
        clk[a_b, s_b] += n_clk
        first[a_b, s_b] = np.where(first[a_b, s_b] < 0, w, first[a_b, s_b])
        next_ok[a_b, s_b] = w + block_weeks(days)
    return out


# ---------------------------------------------------------------------------
# synthetic markets


@dataclass(frozen=True)
class MarketConfig:
    """Generator settings. Defaults mirror the estimation sample's scale."""

    n_advertisers: int = 100
    n_sites: int = 20
    n_weeks: int = 27
    traffic_min: float = 20_000.0
    traffic_max: float = 420_000.0
    durations: tuple = (7, 14, 30)
    option_prob: float = 0.7
    cpm: float = 800.0 / 821.0
    price_lambda: float = 0.8
    site_price_sd: float = 0.2
    week_price_sd: float = 0.02
    price_noise_sd: float = 0.0
    median_ctr: float = 0.00045
    ctr_log_sd: float = 1.0
    ctr_shares: tuple = (0.51, 0.09, 0.40)
    topic_share: float = 0.7
    n_topics: int = 6
    tags_per_topic: int = 12
    generic_tags: int = 150
    topic_tag_prob: float = 0.9
    tags_per_image: int = 10
    overoptimism: float = 5.0
    gamma_bar: float | None = None
    zeta_excess_mean: float = 0.02
    xi_mean: float = -2.9
    xi_sd: float = 0.5
    eta_sd: float = 0.2
    phi_sd: float = 0.2
    psi_sd: float = 0.1
    sigma: float = 1.0
    late_join_fraction: float = 0.7
    kappa: float = 1.0
    start_date: str = "2007-01-01"
    seed: int = 0

    def __post_init__(self):
        for name in ("n_advertisers", "n_sites", "n_weeks", "n_topics", "tags_per_image"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive")
        if not 0 < self.traffic_min <= self.traffic_max:
            raise DomainError("traffic range must be positive and ordered")
        if not self.sigma > 0 or not self.median_ctr > 0:
            raise DomainError("sigma and median_ctr must be positive")
        if sorted(self.durations) != list(self.durations) or len(set(self.durations)) != len(self.durations):
            raise DomainError("durations must be strictly increasing")

    @property
    def implied_gamma_bar(self) -> float:
        """gamma_bar giving a median gamma of ``overoptimism * median_ctr``.

        With g ~ Exponential(1), gamma ~= gamma_bar * g, whose median is
        gamma_bar * ln 2.
        """
        if self.gamma_bar is not None:
            return self.gamma_bar
        return self.overoptimism * self.median_ctr / math.log(2)


@dataclass
class TagStructuredCtr:
    ctr: np.ndarray              # (A, S)
    topics: np.ndarray           # (A,)
    tags: list                   # (advertiser index, image id, tag)


def tag_structured_ctr(rng: np.random.Generator, n_advertisers: int, n_sites: int,
                       config: MarketConfig = MarketConfig()) -> TagStructuredCtr:
    """CTRs whose advertiser and match components are shared within tag topics.

    log c = log(median) + topic effect + own effect + site effect
            + topic-site affinity + idiosyncratic residual,
    with variance shares ``ctr_shares`` (advertiser, site, residual) and
    ``topic_share`` of the advertiser and residual parts carried by the topic.
    """
    A, S, K = n_advertisers, n_sites, config.n_topics
    v = config.ctr_log_sd**2
    sh_a, sh_s, sh_r = config.ctr_shares
    q = config.topic_share
    topics = rng.integers(K, size=A)
    topic_eff = rng.normal(0, math.sqrt(v * sh_a * q), size=K)
    own = rng.normal(0, math.sqrt(v * sh_a * (1 - q)), size=A)
    site = rng.normal(0, math.sqrt(v * sh_s), size=S)
    affinity = rng.normal(0, math.sqrt(v * sh_r * q), size=(K, S))
    resid = rng.normal(0, math.sqrt(v * sh_r * (1 - q)), size=(A, S))
    log_c = (math.log(config.median_ctr) + topic_eff[topics][:, None] + own[:, None]
             + site[None, :] + affinity[topics] + resid)
    ctr = np.minimum(np.exp(log_c), 0.5)

    topic_vocab = [[f"tag{k * config.tags_per_topic + j:03d}" for j in range(config.tags_per_topic)]
                   for k in range(K)]
    base = K * config.tags_per_topic
    generic = [f"tag{base + j:03d}" for j in range(config.generic_tags)]
    tags = []
    for a in range(A):
        n_images = 1 + min(int(rng.poisson(1.0)), 2)
        for img in range(n_images):
            chosen: list[str] = []
            while len(chosen) < config.tags_per_image:
                pool = topic_vocab[topics[a]] if rng.random() < config.topic_tag_prob else generic
                t = pool[rng.integers(len(pool))]
                if t not in chosen:
                    chosen.append(t)
            tags.extend((a, img + 1, t) for t in chosen)
    return TagStructuredCtr(ctr, topics, tags)


@dataclass
class SyntheticMarket:
    config: MarketConfig
    panel: MarketPanel
    truth: ThetaDraw
    ctr: np.ndarray
    topics: np.ndarray
    tags: list
    outcome: SimOutcome

    @property
    def purchases(self) -> PurchasePanel:
        return self.outcome.purchases()

    def transactions(self):
        return self.purchases.transactions(self.panel)

    def tag_rows(self) -> list[tuple[str, str, str]]:
        ids = self.panel.advertiser_ids
        return [(ids[a], f"{ids[a]}_img{img}", t) for a, img, t in self.tags]


def generate_synthetic_market(config: MarketConfig = MarketConfig()) -> SyntheticMarket:
    """Draw true parameters and CTRs, then simulate 27 weeks of choices."""
    A, S, W = config.n_advertisers, config.n_sites, config.n_weeks
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    adv_ids = tuple(f"a{i + 1:03d}" for i in range(A))
    site_ids = tuple(f"s{i + 1:02d}" for i in range(S))
    traffic = np.exp(np.linspace(math.log(config.traffic_min), math.log(config.traffic_max), S))
    durations = np.array(config.durations, dtype=np.int64)
    Kd = len(durations)

    avail_site = np.ones((S, Kd), dtype=bool)
    if Kd > 1:
        avail_site[:, 1:] = rng.random((S, Kd - 1)) < config.option_prob
    avail = np.repeat(avail_site[:, None, :], W, axis=1)
    lam = config.price_lambda
    mu_s = (np.log(config.cpm / 1000.0 * traffic * durations[0]) - lam * math.log(durations[0])
            + rng.normal(0, config.site_price_sd, size=S))
    mu_w = rng.normal(0, config.week_price_sd, size=W)
    log_p = (mu_s[:, None, None] + mu_w[None, :, None] + lam * np.log(durations)[None, None, :]
             + rng.normal(0, config.price_noise_sd, size=(S, W, Kd)) * (config.price_noise_sd > 0))
    prices = np.where(avail, np.round(np.exp(log_p) * 100) / 100, np.nan)

    month_of_week, month_labels = month_labels_for_weeks(W, config.start_date)
    late = rng.random(A) < config.late_join_fraction
    join = np.where(late, rng.integers(1, max(2, W - 4), size=A), 0)
    panel = MarketPanel(adv_ids, site_ids, W, traffic, durations, avail, prices, join,
                        month_of_week, month_labels)

    g = rng.exponential(1.0, size=A)
    zeta = 0.01 + rng.exponential(config.zeta_excess_mean, size=A)
    zeta_ref = 0.01 + config.zeta_excess_mean
    v_ref = np.log1p(traffic * durations[0] * zeta_ref) / zeta_ref
    eta = (mu_s + lam * math.log(durations[0]) - np.log(v_ref)
           + rng.normal(0, config.eta_sd, size=S))
    n_months = len(set(month_of_week.tolist()))
    truth = ThetaDraw.from_hierarchy(
        g=g, gamma_bar=config.implied_gamma_bar, zeta=zeta,
        xi=rng.normal(config.xi_mean, config.xi_sd, size=A), eta=eta,
        phi=rng.normal(0, config.phi_sd, size=12), psi=rng.normal(0, config.psi_sd, size=n_months),
        sigma=config.sigma, zeta_bar=config.zeta_excess_mean, layout=panel.layout())
    tagged = tag_structured_ctr(rng, A, S, config)

    u_eps = keyed_uniforms(config.seed, "data_eps", 0, (A, S, W))
    u_clk = keyed_uniforms(config.seed, "data_clicks", 0, (A, S, W))
    zeros = np.zeros((A, S), dtype=np.int64)
    outcome = simulate_path(panel, truth, config.sigma * ndtri(u_eps), tagged.ctr, u_clk,
                            zeros, zeros, np.ones((A, S), bool), config.kappa)
    return SyntheticMarket(config, panel, truth, tagged.ctr, tagged.topics, tagged.tags, outcome)


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class ScenarioSpec:
    """A counterfactual cell: who knows what, and which sites can be chosen.

    B and C_F restrict choice sets to pairs with observed purchases; C_P and
    C_FP open every site. Clicks always use the observed pair CTR where one
    exists and the pooled prediction elsewhere.
    """

    regime: str
    choice_set: str = ""
    ctr_source: str = "observed_else_pooled"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise DomainError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        expected = "all" if self.regime in ("C_P", "C_FP") else "observed"
        if not self.choice_set:
            object.__setattr__(self, "choice_set", expected)
        elif self.choice_set != expected:
            raise DomainError(f"regime {self.regime} requires choice_set={expected!r}")
        if self.ctr_source != "observed_else_pooled":
            raise DomainError(f"unsupported ctr_source {self.ctr_source!r}")

    @property
    def expanded(self) -> bool:
        return self.choice_set == "all"


def oracle_state(ctr) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``BeliefState.oracle``: (10^12, floor(10^12 c))."""
    ctr = np.asarray(ctr, dtype=float)
    return (np.full(ctr.shape, ORACLE_IMPRESSIONS, dtype=np.int64),
            np.floor(ORACLE_IMPRESSIONS * ctr).astype(np.int64))


def init_information_state(regime: str, history: BeliefState, observed: bool,
                           ctr_observed: float | None, ctr_pooled: float | None) -> BeliefState:
    """Belief at the start of the simulation for one advertiser-site pair."""
    ScenarioSpec(regime)
    if regime in ("C_F", "C_FP") and observed:
        if ctr_observed is None or not math.isfinite(ctr_observed):
            raise DomainError("observed pair lacks an observed CTR")
        return BeliefState.oracle(ctr_observed)
    if regime in ("C_P", "C_FP"):
        if ctr_pooled is None or not math.isfinite(ctr_pooled):
            raise DomainError("pooled regime needs an imputed CTR for every pair")
        return BeliefState.oracle(ctr_pooled)
    return history


@dataclass
class CounterfactualInputs:
    """Observed market plus the derived CTR tables the scenarios need."""

    panel: MarketPanel
    purchases: PurchasePanel
    choice_data: ChoiceData
    decisions: Decisions
    ctr_observed: np.ndarray
    ctr_pooled: np.ndarray
    history_imp: np.ndarray
    history_clk: np.ndarray
    kappa: float = 1.0
    missing_pooled: str = "error"

    def __post_init__(self):
        if self.missing_pooled not in MISSING_POOLED_MODES:
            raise DomainError(f"missing_pooled must be one of {MISSING_POOLED_MODES}")

    @classmethod
    def build(cls, panel: MarketPanel, purchases: PurchasePanel, ctr_pooled: np.ndarray,
              kappa: float = 1.0, history: tuple | None = None,
              missing_pooled: str = "error") -> "CounterfactualInputs":
        decisions = replay_decisions(panel, purchases)
        data = build_choice_data(panel, purchases, decisions, kappa)
        imp, clk = purchases.pair_totals()
        with np.errstate(invalid="ignore", divide="ignore"):
            c_obs = np.where(imp > 0, clk / np.maximum(imp, 1), np.nan)
        shape = (len(panel.advertiser_ids), len(panel.site_ids))
        h_imp, h_clk = history if history is not None else (np.zeros(shape, np.int64),) * 2
        return cls(panel, purchases, data, decisions, c_obs, np.asarray(ctr_pooled, float),
                   h_imp, h_clk, kappa, missing_pooled)

    @property
    def observed(self) -> np.ndarray:
        return np.isfinite(self.ctr_observed)

    def unit_masks(self) -> tuple[np.ndarray, np.ndarray]:
        """Advertisers and sites with at least one observed purchase."""
        obs = self.observed
        return obs.any(axis=1), obs.any(axis=0)

    def click_ctr(self) -> np.ndarray:
        return np.where(self.observed, self.ctr_observed, self.ctr_pooled)

    def choice_mask(self, scenario: ScenarioSpec) -> np.ndarray:
        """Pairs an advertiser may choose under ``scenario``.

        Expanded sets open every pair whose clicks can be simulated: observed
        pairs, plus pairs with a pooled CTR. Under ``missing_pooled="error"``
        a missing pooled CTR raises in ``initial_states`` instead.
        """
        if not scenario.expanded:
            return self.observed
        if self.missing_pooled == "restrict":
            return self.observed | np.isfinite(self.ctr_pooled)
        return np.ones(self.observed.shape, bool)

    def initial_states(self, scenario: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
        r = scenario.regime
        imp, clk = self.history_imp.copy(), self.history_clk.copy()
        obs = self.observed
        if r in ("C_P", "C_FP"):
            need = ~obs if r == "C_FP" else np.ones_like(obs)
            missing = need & ~np.isfinite(self.ctr_pooled)
            if self.missing_pooled == "restrict":
                need = need & ~missing
            elif missing.any():
                a, s = np.argwhere(missing)[0]
                raise DomainError(
                    f"no pooled CTR for advertiser {self.panel.advertiser_ids[a]} at site "
                    f"{self.panel.site_ids[s]} ({int(missing.sum())} pairs missing)")
            oi, oc = oracle_state(np.where(need, self.ctr_pooled, 0.0))
            imp, clk = np.where(need, oi, imp), np.where(need, oc, clk)
        if r in ("C_F", "C_FP"):
            oi, oc = oracle_state(np.where(obs, self.ctr_observed, 0.0))
            imp, clk = np.where(obs, oi, imp), np.where(obs, oc, clk)
        return imp, clk


def truncation_bounds(theta: ThetaDraw, inputs: CounterfactualInputs) -> tuple[np.ndarray, np.ndarray]:
    """(A, S, W) shock bounds: the rationalising interval at observed choices, else infinite."""
    shape = inputs.panel.shape
    lo = np.full(shape, -np.inf)
    hi = np.full(shape, np.inf)
    data = inputs.choice_data
    lb, ub = bounds_arrays(data, theta)
    w = data.weeks - 1
    lo[data.adv, data.site, w] = lb
    hi[data.adv, data.site, w] = ub
    return lo, hi


def scenario_shocks(theta: ThetaDraw, inputs: CounterfactualInputs, seed: int, draw: int,
                    truncate: bool = True) -> np.ndarray:
    """Shocks for one posterior draw, truncated at observed choices.

    Where (a, s, w) was an observed decision the shock is drawn from
    N(0, sigma^2) restricted to the interval that rationalises the observed
    choice under ``theta``; elsewhere it is unrestricted. The same uniforms
    feed every regime, so runs that truncate alike share their shocks.
    """
    u = keyed_uniforms(seed, "eps", draw, inputs.panel.shape)
    if not truncate:
        return theta.sigma * ndtri(u)
    lo, hi = truncation_bounds(theta, inputs)
    return truncated_normal_ppf(u, lo, hi, theta.sigma)


def run_scenario(theta: ThetaDraw, scenario: ScenarioSpec, inputs: CounterfactualInputs,
                 seed: int, draw: int = 0, eps: np.ndarray | None = None) -> SimOutcome:
    shape = inputs.panel.shape
    if eps is None:
        eps = scenario_shocks(theta, inputs, seed, draw)
    click_u = keyed_uniforms(seed, "clicks", draw, shape)
    imp0, clk0 = inputs.initial_states(scenario)
    return simulate_path(inputs.panel, theta, eps, inputs.click_ctr(), click_u, imp0, clk0,
                         inputs.choice_mask(scenario), inputs.kappa)


# ---------------------------------------------------------------------------
# welfare and summaries


def true_welfare(outcome: SimOutcome, oracle_ctr: np.ndarray, theta: ThetaDraw,
                 panel: MarketPanel, kappa: float = 1.0,
                 phi_effect: np.ndarray | None = None) -> np.ndarray:
    """Per-advertiser realised net payoff (dollars) under oracle beliefs.

    Each purchase's belief ratio is replaced by the ratio implied by the
    oracle state (10^12, floor(10^12 c)); the realised shock is kept and the
    price is subtracted. ``phi_effect`` optionally overrides the tenure
    effect per (a, s, w).
    """
    bought = outcome.k > 0
    a, s, w = np.nonzero(bought)
    if len(a) == 0:
        return np.zeros(len(panel.advertiser_ids))
    c = oracle_ctr[a, s]
    if not np.all(np.isfinite(c)):
        raise DomainError("oracle CTR missing for a purchased pair")
    n_i, n_c = oracle_state(c)
    ratio = (kappa + n_c) / (kappa + theta.gamma[a] * n_i)
    phi = theta.phi[outcome.tau[a, s, w]] if phi_effect is None else phi_effect[a, s, w]
    month = panel.month_param_index()[w]
    V = valuation_table(panel, theta.zeta)[a, s, outcome.k[a, s, w] - 1]
    value = ratio * np.exp(theta.xi[a] + theta.eta[s] + phi + theta.psi[month]
                           + outcome.epsilon[a, s, w]) * V
    net = value - outcome.price_cents[a, s, w] / 100.0
    return np.bincount(a, weights=net, minlength=len(panel.advertiser_ids))


@dataclass
class PairedRun:
    draw: int
    regime: str
    baseline: SimOutcome
    counterfactual: SimOutcome
    welfare_baseline: np.ndarray
    welfare_counterfactual: np.ndarray
    unshared: np.ndarray | None = None

    def shared_mask(self) -> np.ndarray:
        """Triples where both runs drew a shock from the same distribution."""
        both = self.baseline.decided & self.counterfactual.decided
        return both if self.unshared is None else both & ~self.unshared

    def shared_shocks_identical(self) -> bool:
        both = self.shared_mask()
        a = self.baseline.epsilon[both]
        b = self.counterfactual.epsilon[both]
        return a.tobytes() == b.tobytes()

    def summary(self) -> "PairSummary":
        b, c = self.baseline, self.counterfactual
        return PairSummary(self.draw, self.regime, b.spend_cents(), c.spend_cents(),
                           self.welfare_baseline, self.welfare_counterfactual,
                           b.revenue_cents(), c.revenue_cents(), self.shared_shocks_identical(),
                           int(b.spend_cents().sum()) == int(b.revenue_cents().sum())
                           and int(c.spend_cents().sum()) == int(c.revenue_cents().sum()))


@dataclass
class PairSummary:
    """Per-unit totals of one paired run; spend and revenue in integer cents."""

    draw: int
    regime: str
    spend_baseline: np.ndarray
    spend_counterfactual: np.ndarray
    welfare_baseline: np.ndarray
    welfare_counterfactual: np.ndarray
    revenue_baseline: np.ndarray
    revenue_counterfactual: np.ndarray
    shocks_shared: bool = True
    balanced: bool = True


def paired_welfare(base: SimOutcome, cf: SimOutcome, oracle_ctr, theta, panel, kappa=1.0):
    """Welfare of both runs, averaging phi where paths disagree on tenure."""
    both = base.decided & cf.decided & (base.tau != cf.tau)
    avg = 0.5 * (theta.phi[base.tau] + theta.phi[cf.tau])
    phi_b = np.where(both, avg, theta.phi[base.tau])
    phi_c = np.where(both, avg, theta.phi[cf.tau])
    return (true_welfare(base, oracle_ctr, theta, panel, kappa, phi_b),
            true_welfare(cf, oracle_ctr, theta, panel, kappa, phi_c))


MISSING_POOLED_MODES = ("error", "restrict")
TRUNCATION_MODES = ("all", "baseline")


def run_pairs(draws: Sequence[ThetaDraw], regimes: Sequence[str], inputs: CounterfactualInputs,
              seed: int, truncation: str = "all", keep_outcomes: bool = True,
              first_draw: int = 0) -> list:
    """Baseline and each counterfactual regime for every posterior draw.

    ``truncation="all"`` truncates shocks at observed choices in every
    regime, so paired runs share one shock vector. ``"baseline"`` truncates
    only in the baseline run; the triples it truncates are then not shared.
    With ``keep_outcomes=False`` only ``PairSummary`` objects are returned.
    Draw ``i`` of ``draws`` uses shock key ``first_draw + i``.
    """
    if truncation not in TRUNCATION_MODES:
        raise DomainError(f"truncation must be one of {TRUNCATION_MODES}")
    oracle = inputs.click_ctr()
    out = []
    observed = np.zeros(inputs.panel.shape, bool)
    cd = inputs.choice_data
    observed[cd.adv, cd.site, cd.weeks - 1] = True
    for d, theta in enumerate(draws, start=first_draw):
        eps = scenario_shocks(theta, inputs, seed, d)
        eps_cf = eps if truncation == "all" else scenario_shocks(theta, inputs, seed, d, truncate=False)
        unshared = None if truncation == "all" else observed
        base = run_scenario(theta, ScenarioSpec("B"), inputs, seed, d, eps)
        for r in regimes:
            cf = run_scenario(theta, ScenarioSpec(r), inputs, seed, d, eps_cf)
            wb, wc = paired_welfare(base, cf, oracle, theta, inputs.panel, inputs.kappa)
            pair = PairedRun(d, r, base, cf, wb, wc, unshared)
            out.append(pair if keep_outcomes else pair.summary())
    return out


def format_cell(change: float, percent: float) -> str:
    """Table cell like "-$180 (-22.1%)"."""
    sign = "-" if change < 0 else ""
    money = f"{sign}${abs(change):,.0f}"
    pct = "n/a" if not math.isfinite(percent) else f"{percent:.1f}%"
    return f"{money} ({pct})"


def bootstrap_median_ci(values: np.ndarray, rng: np.random.Generator, n_boot: int = 2000,
                        level: float = 0.95) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    meds = np.median(values[idx], axis=1)
    lo, hi = np.quantile(meds, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


@dataclass
class UnitTable:
    """Posterior-mean baseline and counterfactual levels per unit."""

    regime: str
    metric: str
    unit_ids: tuple
    baseline: np.ndarray
    counterfactual: np.ndarray

    @property
    def change(self) -> np.ndarray:
        return self.counterfactual - self.baseline


@dataclass
class SummaryRow:
    regime: str
    metric: str
    median_change: float
    percent_change: float
    ci_low: float
    ci_high: float
    n_units: int
    n_draws: int
    cell: str = field(default="")


def compare_runs(pairs: Sequence, panel: MarketPanel, n_boot: int = 2000,
                 seed: int = 0, advertisers: np.ndarray | None = None,
                 sites: np.ndarray | None = None) -> tuple[list[UnitTable], list[SummaryRow]]:
    """Median unit-level changes with bootstrap intervals over units.

    Per unit, levels are averaged over posterior draws first. The reported
    change is the median over units of the per-unit change; the percentage is
    that median divided by the median baseline level; the interval comes from
    resampling units. ``advertisers`` and ``sites`` are boolean masks that
    select the units summarised (normally those seen in the data); tables
    always carry every unit.
    """
    if not pairs:
        raise DomainError("compare_runs needs at least one pair")
    pairs = [p.summary() if isinstance(p, PairedRun) else p for p in pairs]
    A, S, _ = panel.shape
    adv_mask = np.ones(A, bool) if advertisers is None else np.asarray(advertisers, bool)
    site_mask = np.ones(S, bool) if sites is None else np.asarray(sites, bool)
    if not adv_mask.any() or not site_mask.any():
        raise DomainError("no units selected for comparison")
    tables: list[UnitTable] = []
    rows: list[SummaryRow] = []
    for regime in [r for r in REGIMES if any(p.regime == r for p in pairs)]:
        sel = sorted((p for p in pairs if p.regime == regime), key=lambda p: p.draw)
        n = len(sel)
        metrics = {
            "advertiser_spend": (panel.advertiser_ids, "spend", 0.01),
            "advertiser_valuation": (panel.advertiser_ids, "welfare", 1.0),
            "publisher_revenue": (panel.site_ids, "revenue", 0.01),
        }
        for metric, (ids, attr, scale) in metrics.items():
            base = scale * sum(getattr(p, f"{attr}_baseline") for p in sel) / n
            cf = scale * sum(getattr(p, f"{attr}_counterfactual") for p in sel) / n
            table = UnitTable(regime, metric, tuple(ids), base, cf)
            tables.append(table)
            mask = site_mask if metric == "publisher_revenue" else adv_mask
            change = table.change[mask]
            med = float(np.median(change))
            med_base = float(np.median(base[mask]))
            pct = 100.0 * med / abs(med_base) if med_base != 0 else math.nan
            rng = np.random.default_rng(np.random.SeedSequence(
                [seed, _STREAMS["bootstrap"], REGIMES.index(regime), len(tables)]))
            lo, hi = bootstrap_median_ci(change, rng, n_boot)
            rows.append(SummaryRow(regime, metric, med, pct, lo, hi, len(change), n,
                                   format_cell(med, pct)))
    return tables, rows
