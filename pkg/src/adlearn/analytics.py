"""Descriptive market metrics: CPC by retention, site counts, set persistence, CTR ANOVA."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .model import DomainError
from .panel import Transaction


def jaccard(a: Iterable, b: Iterable, return_flag: bool = False):
    """|A & B| / |A | B|; two empty sets give 1 and set the flag."""
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return (1.0, True) if return_flag else 1.0
    value = len(a & b) / len(union)
    return (value, False) if return_flag else value


def _bootstrap_mean_ci(values: np.ndarray, rng: np.random.Generator, n_boot: int,
                       level: float = 0.95) -> tuple[float, float]:
    if len(values) == 1:
        return float(values[0]), float(values[0])
    boot = values[rng.integers(0, len(values), size=(n_boot, len(values)))].mean(axis=1)
    lo, hi = np.quantile(boot, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


@dataclass(frozen=True)
class SeriesPoint:
    index: int
    mean: float
    ci_low: float
    ci_high: float
    n: int


def persistence_series(transactions: Sequence[Transaction], join_week: Mapping[Hashable, int] | None = None,
                       period: int = 2, max_periods: int = 13, n_boot: int = 1000,
                       seed: int = 0) -> list[SeriesPoint]:
    """Mean Jaccard between each period's site set and the latest earlier active period.

    Periods are ``period``-week blocks counted from the advertiser's joining
    week (default: its first purchase week). Only advertisers with at least
    two active periods contribute. ``index`` is the 1-based period number.
    """
    by_adv: dict = defaultdict(list)
    for t in transactions:
        by_adv[t.advertiser_id].append(t)
    per_period: dict[int, list[float]] = defaultdict(list)
    for adv, rows in by_adv.items():
        start = join_week[adv] if join_week is not None and adv in join_week else min(r.week for r in rows)
        sets: dict[int, set] = defaultdict(set)
        for r in rows:
            p = (r.week - start) // period
            if 0 <= p < max_periods:
                sets[p].add(r.site_id)
        active = sorted(sets)
        if len(active) < 2:
            continue
        for prev, cur in zip(active, active[1:]):
            per_period[cur + 1].append(jaccard(sets[cur], sets[prev]))
    rng = np.random.default_rng(seed)
    out = []
    for p in sorted(per_period):
        v = np.array(per_period[p])
        lo, hi = _bootstrap_mean_ci(v, rng, n_boot)
        out.append(SeriesPoint(p, float(v.mean()), lo, hi, len(v)))
    return out


@dataclass
class CpcSplit:
    """Pair-level CPCs, split by whether the advertiser returned to the site."""

    continued: np.ndarray
    abandoned: np.ndarray
    zero_click_continued: list = field(default_factory=list)
    zero_click_abandoned: list = field(default_factory=list)

    @property
    def median_continued(self) -> float:
        return float(np.median(self.continued)) if len(self.continued) else math.nan

    @property
    def median_abandoned(self) -> float:
        return float(np.median(self.abandoned)) if len(self.abandoned) else math.nan


def cpc_by_retention(transactions: Sequence[Transaction]) -> CpcSplit:
    """Cumulative spend over cumulative clicks per advertiser-site pair.

    A pair is "continued" when it has more than one placement and
    "abandoned" otherwise. Zero-click pairs have infinite CPC; they are
    listed separately and kept out of the arrays used for medians.
    """
    spend: dict = defaultdict(float)
    clicks: dict = defaultdict(int)
    count: dict = defaultdict(int)
    for t in transactions:
        key = (t.advertiser_id, t.site_id)
        spend[key] += t.price
        clicks[key] += t.clicks
        count[key] += 1
    cont, aband, zc, za = [], [], [], []
    for key in sorted(spend):
        if spend[key] <= 0:
            continue
        again = count[key] > 1
        if clicks[key] == 0:
            (zc if again else za).append(key)
            continue
        (cont if again else aband).append(spend[key] / clicks[key])
    return CpcSplit(np.array(cont), np.array(aband), zc, za)


def active_sites_series(transactions: Sequence[Transaction], first_day: int = 7,
                        horizon_days: int = 182) -> list[SeriesPoint]:
    """Average number of sites with a running ad per day since the first purchase.

    Day 1 is the first day of the advertiser's first subscription. The
    average on each day covers advertisers with at least one ad running that
    day; days before ``first_day`` are dropped. ``ci_low``/``ci_high`` carry
    the min and max count across those advertisers.
    """
    by_adv: dict = defaultdict(list)
    for t in transactions:
        by_adv[t.advertiser_id].append(t)
    counts: dict[int, list[int]] = defaultdict(list)
    for rows in by_adv.values():
        start = min(r.week for r in rows)
        running = np.zeros(horizon_days + 1, dtype=np.int64)
        for r in rows:
            d0 = 7 * (r.week - start) + 1
            d1 = min(d0 + r.days - 1, horizon_days)
            if d0 <= horizon_days:
                running[d0:d1 + 1] += 1
        for d in range(first_day, horizon_days + 1):
            if running[d] > 0:
                counts[d].append(int(running[d]))
    out = []
    for d in sorted(counts):
        v = np.array(counts[d])
        out.append(SeriesPoint(d, float(v.mean()), float(v.min()), float(v.max()), len(v)))
    return out


@dataclass(frozen=True)
class CtrRecord:
    advertiser_id: Hashable
    site_id: Hashable
    ctr: float

    def __post_init__(self):
        if not 0.0 <= self.ctr <= 1.0:
            raise DomainError(f"CTR outside [0, 1]: {self.ctr}")


@dataclass
class AnovaResult:
    terms: tuple
    df: tuple
    ss: tuple
    percent: tuple

    def rows(self) -> list[dict]:
        return [{"term": t, "df": d, "sum_sq": s, "percent": p}
                for t, d, s, p in zip(self.terms, self.df, self.ss, self.percent)]


def _rss(X: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ beta
    return float(r @ r), int(rank)


def variance_decomposition(records: Sequence[CtrRecord]) -> AnovaResult:
    """Sequential two-way ANOVA: advertiser first, then site, then residual."""
    advs = sorted({r.advertiser_id for r in records}, key=str)
    sites = sorted({r.site_id for r in records}, key=str)
    if len(advs) < 2 or len(sites) < 2:
        raise DomainError("variance decomposition needs at least two advertisers and two sites")
    ai = {a: i for i, a in enumerate(advs)}
    si = {s: i for i, s in enumerate(sites)}
    n = len(records)
    y = np.array([r.ctr for r in records], dtype=float)
    Xa = np.zeros((n, len(advs)))
    Xs = np.zeros((n, len(sites)))
    for k, r in enumerate(records):
        Xa[k, ai[r.advertiser_id]] = 1.0
        Xs[k, si[r.site_id]] = 1.0
    tss = float(np.sum((y - y.mean()) ** 2))
    rss_a, rank_a = _rss(Xa, y)
    rss_as, rank_as = _rss(np.hstack([Xa, Xs]), y)
    ss_a = max(tss - rss_a, 0.0)
    ss_s = max(rss_a - rss_as, 0.0)
    ss_r = max(rss_as, 0.0)
    total = ss_a + ss_s + ss_r
    pct = tuple(100.0 * v / total for v in (ss_a, ss_s, ss_r)) if total > 0 else (0.0, 0.0, 100.0)
    return AnovaResult(("advertiser", "site", "residual"),
                       (rank_a - 1, rank_as - rank_a, n - rank_as), (ss_a, ss_s, ss_r), pct)
