"""Dense advertiser x site x week representation of a market.

Weeks are 1-based in files and 0-based in arrays. Menus are stored against a
fixed template of durations ``durations`` with an availability mask, so a
site-week menu is the pair ``(avail[s, w], prices[s, w])``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .likelihood import DEFAULT_FLOOR, ChoiceData
from .model import DomainError, Menu, tau_buckets
from .theta import ParamLayout

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transaction:
    """One completed subscription, as stored in the transactions CSV."""

    advertiser_id: str
    site_id: str
    week: int
    days: int
    price: float
    impressions: int
    clicks: int

    def __post_init__(self):
        if self.days < 1:
            raise DomainError(f"days must be >= 1, got {self.days}")
        if self.price < 0:
            raise DomainError(f"price must be >= 0, got {self.price}")
        if not 0 <= self.clicks <= self.impressions:
            raise DomainError(f"need 0 <= clicks <= impressions, got {self.clicks}/{self.impressions}")


def block_weeks(days) -> np.ndarray:
    """Weeks until the next decision: 1 for runs up to 7 days, else ceil(days / 7)."""
    days = np.asarray(days)
    return np.where(days <= 7, 1, -(-days // 7))


@dataclass
class MarketPanel:
    advertiser_ids: tuple
    site_ids: tuple
    n_weeks: int
    traffic: np.ndarray          # (S,)
    durations: np.ndarray        # (K,)
    avail: np.ndarray            # (S, W, K) bool
    prices: np.ndarray           # (S, W, K) float, nan where unavailable
    join_week: np.ndarray        # (A,) 0-based first decision week
    month_of_week: np.ndarray    # (W,) index into month_labels
    month_labels: tuple

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.advertiser_ids), len(self.site_ids), self.n_weeks

    def layout(self) -> ParamLayout:
        used = sorted(set(int(m) for m in self.month_of_week))
        return ParamLayout(len(self.advertiser_ids), len(self.site_ids), len(used),
                           tuple(self.advertiser_ids), tuple(self.site_ids),
                           tuple(self.month_labels[m] for m in used))

    def month_param_index(self) -> np.ndarray:
        """Week -> position of its month among the months the layout knows."""
        used = sorted(set(int(m) for m in self.month_of_week))
        pos = {m: i for i, m in enumerate(used)}
        return np.array([pos[int(m)] for m in self.month_of_week])

    def menu(self, s: int, w: int) -> Menu:
        k = self.avail[s, w]
        return Menu.from_pairs(zip(self.durations[k], self.prices[s, w, k]))

    def with_prices(self, prices: np.ndarray) -> "MarketPanel":
        return MarketPanel(self.advertiser_ids, self.site_ids, self.n_weeks, self.traffic,
                           self.durations, self.avail, prices, self.join_week,
                           self.month_of_week, self.month_labels)

    def price_cents(self) -> np.ndarray:
        """Menu prices in integer cents (0 where unavailable)."""
        return np.where(self.avail, np.round(np.nan_to_num(self.prices) * 100), 0).astype(np.int64)


@dataclass
class PurchasePanel:
    """Purchases on the (A, S, W) grid; ``k`` is 0 for none, else duration index + 1."""

    k: np.ndarray
    impressions: np.ndarray
    clicks: np.ndarray
    price_cents: np.ndarray

    @classmethod
    def empty(cls, shape) -> "PurchasePanel":
        return cls(np.zeros(shape, dtype=np.int64), np.zeros(shape, dtype=np.int64),
                   np.zeros(shape, dtype=np.int64), np.zeros(shape, dtype=np.int64))

    @classmethod
    def from_transactions(cls, panel: MarketPanel, rows: Sequence[Transaction]) -> "PurchasePanel":
        out = cls.empty(panel.shape)
        a_idx = {a: i for i, a in enumerate(panel.advertiser_ids)}
        s_idx = {s: i for i, s in enumerate(panel.site_ids)}
        d_idx = {int(d): i for i, d in enumerate(panel.durations)}
        for r in rows:
            try:
                a, s, kd = a_idx[r.advertiser_id], s_idx[r.site_id], d_idx[int(r.days)]
            except KeyError as exc:
                raise DomainError(f"transaction refers to unknown id or duration: {exc}") from None
            w = int(r.week) - 1
            if not 0 <= w < panel.n_weeks:
                raise DomainError(f"week {r.week} outside 1..{panel.n_weeks}")
            if out.k[a, s, w]:
                raise DomainError(f"two purchases for {r.advertiser_id}/{r.site_id} in week {r.week}")
            out.k[a, s, w] = kd + 1
            out.impressions[a, s, w] = r.impressions
            out.clicks[a, s, w] = r.clicks
            out.price_cents[a, s, w] = round(r.price * 100)
        return out

    def transactions(self, panel: MarketPanel) -> list[Transaction]:
        rows = []
        for a, s, w in zip(*np.nonzero(self.k)):
            rows.append(Transaction(
                str(panel.advertiser_ids[a]), str(panel.site_ids[s]), int(w) + 1,
                int(panel.durations[self.k[a, s, w] - 1]), self.price_cents[a, s, w] / 100,
                int(self.impressions[a, s, w]), int(self.clicks[a, s, w])))
        return rows

    def pair_totals(self) -> tuple[np.ndarray, np.ndarray]:
        return self.impressions.sum(axis=2), self.clicks.sum(axis=2)

    def observed_pairs(self) -> np.ndarray:
        return (self.k > 0).any(axis=2)


@dataclass
class Decisions:
    """Decision points implied by a purchase history, with beliefs at each."""

    decided: np.ndarray      # (A, S, W) bool
    belief_imp: np.ndarray   # (A, S, W) cumulative impressions before the week
    belief_clk: np.ndarray
    tau: np.ndarray          # (A, S, W) tenure bucket
    overlaps: int = 0


def replay_decisions(panel: MarketPanel, purchases: PurchasePanel) -> Decisions:
    """Reconstruct which (a, s, w) were choices and the beliefs held at each.

    An advertiser chooses at every site from its joining week on, except in
    weeks covered by a running subscription. A purchase recorded inside such
    a window is kept as a decision and counted in ``overlaps``.
    """
    A, S, W = panel.shape
    imp = np.zeros((A, S), dtype=np.int64)
    clk = np.zeros((A, S), dtype=np.int64)
    first = np.full((A, S), -1)
    next_ok = np.zeros((A, S), dtype=np.int64)
    out = Decisions(np.zeros((A, S, W), bool), np.zeros((A, S, W), np.int64),
                    np.zeros((A, S, W), np.int64), np.zeros((A, S, W), np.int64))
    join = panel.join_week[:, None]
    overlaps = 0
    for w in range(W):
        bought = purchases.k[:, :, w] > 0
        active = (w >= join) & (next_ok <= w)
        overlaps += int(np.sum(bought & ~active))
        dec = active | bought
        out.decided[:, :, w] = dec
        out.belief_imp[:, :, w] = imp
        out.belief_clk[:, :, w] = clk
        out.tau[:, :, w] = tau_buckets(np.where(first >= 0, w - first, -1))
        if bought.any():
            days = panel.durations[np.maximum(purchases.k[:, :, w] - 1, 0)]
            imp += np.where(bought, purchases.impressions[:, :, w], 0)
            clk += np.where(bought, purchases.clicks[:, :, w], 0)
            first = np.where(bought & (first < 0), w, first)
            next_ok = np.where(bought, w + block_weeks(days), next_ok)
    if overlaps:
        log.warning("%d purchases fall inside a running subscription window", overlaps)
    out.overlaps = overlaps
    return out


def build_choice_data(panel: MarketPanel, purchases: PurchasePanel,
                      decisions: Decisions | None = None, kappa: float = 1.0,
                      floor: float = DEFAULT_FLOOR) -> ChoiceData:
    """Flatten every decision point into likelihood arrays, ordered by (a, s, w).

    Prices are taken from ``panel.prices`` (normally the smoothed menu).
    """
    if decisions is None:
        decisions = replay_decisions(panel, purchases)
    a, s, w = np.nonzero(decisions.decided)
    k = purchases.k[a, s, w]
    avail = panel.avail[s, w]                      # (n, K)
    prices = np.where(avail, panel.prices[s, w], np.nan)
    durations = panel.durations.astype(float)
    n, K = avail.shape
    bad = (k > 0) & ~avail[np.arange(n), np.maximum(k - 1, 0)]
    if bad.any():
        i = int(np.argmax(bad))
        raise DomainError(
            f"purchase of {panel.durations[k[i] - 1]} days at site {panel.site_ids[s[i]]} "
            f"week {w[i] + 1} is not on that week's menu")

    # every offered menu must price longer runs strictly higher
    last = np.full(n, -np.inf)
    for j in range(K):
        if np.any(avail[:, j] & ~(prices[:, j] > last)):
            raise DomainError("menu prices must increase strictly with duration")
        last = np.where(avail[:, j], prices[:, j], last)

    x = np.where(k > 0, durations[np.maximum(k - 1, 0)], 0.0)
    price = np.where(k > 0, prices[np.arange(n), np.maximum(k - 1, 0)], 0.0)
    # next-shorter available option (outside option if none), next-longer available option
    x_dn = np.zeros(n)
    p_dn = np.zeros(n)
    x_up = np.zeros(n)
    p_up = np.full(n, np.nan)
    has_up = np.zeros(n, dtype=bool)
    for j in range(K):
        idx = j + 1
        lower = avail[:, j] & (idx < k)
        x_dn = np.where(lower, durations[j], x_dn)
        p_dn = np.where(lower, prices[:, j], p_dn)
    for j in reversed(range(K)):
        idx = j + 1
        upper = avail[:, j] & (idx > k)
        x_up = np.where(upper, durations[j], x_up)
        p_up = np.where(upper, prices[:, j], p_up)
        has_up |= upper
    has_lo = k > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        gap_lo = np.where(has_lo, price - p_dn, 1.0)
        gap_up = np.where(has_up, p_up - price, 1.0)
    if np.any(~(gap_lo > 0)) or np.any(~(gap_up > 0)):
        raise DomainError("menu prices must increase strictly with duration")
    traffic = panel.traffic[s]
    month_pos = panel.month_param_index()[w]
    return ChoiceData(
        layout=panel.layout(), adv=a.astype(np.int64), site=s.astype(np.int64),
        tau=decisions.tau[a, s, w], month=month_pos.astype(np.int64),
        clicks=decisions.belief_clk[a, s, w].astype(float),
        impressions=decisions.belief_imp[a, s, w].astype(float), traffic=traffic,
        x=x, x_dn=np.where(has_lo, x_dn, 0.0), x_up=np.where(has_up, x_up, 0.0),
        log_dp_lo=np.where(has_lo, np.log(gap_lo), 0.0),
        log_dp_up=np.where(has_up, np.log(gap_up), 0.0),
        has_lo=has_lo, has_up=has_up, kappa=kappa, floor=floor, weeks=w.astype(np.int64) + 1,
    )


def month_labels_for_weeks(n_weeks: int, start_date: str) -> tuple[np.ndarray, tuple]:
    """Calendar month ("YYYY-MM") of the first day of each week."""
    start = np.datetime64(start_date, "D")
    first_days = start + 7 * np.arange(n_weeks)
    months = first_days.astype("datetime64[M]")
    labels = tuple(sorted({str(m) for m in months}))
    pos = {lab: i for i, lab in enumerate(labels)}
    return np.array([pos[str(m)] for m in months]), labels

