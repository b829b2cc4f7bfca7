"""Log-price regression and smoothed subscription menus.

log p = mu_week + mu_site + lam * log(days) + noise

Prices are smoothed as exp(s2 / 2 + mu_week + mu_site + lam * log(days)),
where s2 is the residual variance, so that predictions are unbiased on the
level scale under log-normal noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping

import numpy as np
from scipy.linalg import qr, solve_triangular

from .model import DomainError, Menu, SubscriptionOption


@dataclass(frozen=True)
class PriceObservation:
    site: Hashable
    week: int
    days: int
    price: float

    def __post_init__(self):
        if not self.price > 0:
            raise DomainError(f"price must be positive, got {self.price}")
        if self.days < 1:
            raise DomainError(f"days must be positive, got {self.days}")


@dataclass
class PriceModel:
    mu_w: dict
    mu_s: dict
    lam: float
    resid_var: float
    r_squared: float
    n_obs: int = 0
    residuals: np.ndarray = field(default=None, repr=False)

    def log_level(self, site, week, days) -> float:
        if week not in self.mu_w:
            raise DomainError(f"week {week!r} is not a level of the price model")
        if site not in self.mu_s:
            raise DomainError(f"site {site!r} is not a level of the price model")
        return self.mu_w[week] + self.mu_s[site] + self.lam * math.log(days)

    def coefficient_rows(self) -> list[tuple[str, float]]:
        rows = [(f"mu_week[{w}]", v) for w, v in self.mu_w.items()]
        rows += [(f"mu_site[{s}]", v) for s, v in self.mu_s.items()]
        rows += [("lambda", self.lam), ("resid_var", self.resid_var),
                 ("r_squared", self.r_squared), ("n_obs", float(self.n_obs))]
        return rows

    def write_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(header_comment.rstrip("\n") + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["term", "value"])
            for name, v in self.coefficient_rows():
                w.writerow([name, format(v, ".17g")])


def fit_price_model(observations: Iterable[PriceObservation]) -> PriceModel:
    """OLS of log price on week and site dummies and log duration.

    The first week and the first site (in sorted order) are reference
    levels; the intercept is folded into the reference week's effect.
    Raises ``DomainError`` naming the offending columns if the design is
    rank deficient.
    """
    obs = list(observations)
    if not obs:
        raise DomainError("no price observations")
    weeks = sorted({o.week for o in obs})
    sites = sorted({o.site for o in obs}, key=lambda s: (str(type(s)), s))
    w_idx = {w: i for i, w in enumerate(weeks)}
    s_idx = {s: i for i, s in enumerate(sites)}
    n = len(obs)
    k = 1 + (len(weeks) - 1) + (len(sites) - 1) + 1
    names = (["intercept"] + [f"week[{w}]" for w in weeks[1:]]
             + [f"site[{s}]" for s in sites[1:]] + ["log_days"])
    X = np.zeros((n, k))
    y = np.empty(n)
    X[:, 0] = 1.0
    off_s = len(weeks)
    for i, o in enumerate(obs):
        wi, si = w_idx[o.week], s_idx[o.site]
        if wi > 0:
            X[i, wi] = 1.0
        if si > 0:
            X[i, off_s + si - 1] = 1.0
        X[i, -1] = math.log(o.days)
        y[i] = math.log(o.price)

    Q, R, perm = qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, k) * np.finfo(float).eps * diag[0] * 10
    rank = int(np.sum(diag > tol))
    if rank < k:
        bad = sorted(names[j] for j in perm[rank:])
        raise DomainError(f"price design is rank deficient; collinear columns: {', '.join(bad)}")
    beta = np.empty(k)
    beta[perm] = solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    resid_var = rss / (n - k) if n > k else 0.0

    mu_w = {weeks[0]: float(beta[0])}
    for j, w in enumerate(weeks[1:], start=1):
        mu_w[w] = float(beta[0] + beta[j])
    mu_s = {sites[0]: 0.0}
    for j, s in enumerate(sites[1:]):
        mu_s[s] = float(beta[off_s + j])
    return PriceModel(mu_w, mu_s, float(beta[-1]), resid_var, r2, n, resid)


def predict_price(model: PriceModel, site, week, days) -> float:
    """Smoothed level-scale price exp(s2/2 + mu_w + mu_s + lam log days)."""
    return math.exp(0.5 * model.resid_var + model.log_level(site, week, days))


def impute_menu_availability(observed: Mapping[tuple, Iterable[int]], model: PriceModel | None = None,
                             weeks: Iterable[int] | None = None, window: int = 4,
                             observed_prices: Mapping[tuple, Mapping[int, float]] | None = None
                             ) -> dict[tuple, Menu]:
    """Complete site-week menus from sparse purchase records.

    ``observed`` maps ``(site, week)`` to the durations seen there. Duration
    x is offered at (s, w) iff it was observed at (s, w') with
    |w - w'| <= window. ``weeks`` is the horizon (default: the span of
    observed weeks). Prices come from ``predict_price``; when ``model`` is
    None, ``observed_prices`` must cover every resulting entry.
    """
    if not observed:
        return {}
    seen: dict = {}
    for (site, week), durations in observed.items():
        for d in durations:
            seen.setdefault((site, int(d)), set()).add(int(week))
    all_weeks = sorted({w for (_, w) in observed})
    horizon = sorted(set(weeks)) if weeks is not None else list(range(all_weeks[0], all_weeks[-1] + 1))
    avail: dict = {}
    for (site, d), wks in seen.items():
        arr = np.array(sorted(wks))
        for w in horizon:
            j = np.searchsorted(arr, w - window)
            if j < len(arr) and arr[j] <= w + window:
                avail.setdefault((site, w), set()).add(d)
    menus = {}
    for key in sorted(avail, key=lambda k: (str(k[0]), k[1])):
        site, w = key
        opts = []
        for d in sorted(avail[key]):
            if model is not None:
                price = predict_price(model, site, w, d)
            else:
                try:
                    price = observed_prices[key][d]
                except (KeyError, TypeError):
                    raise DomainError(f"no price for site {site!r} week {w} days {d}") from None
            opts.append(SubscriptionOption(d, price))
        menus[key] = Menu(tuple(opts))
    return menus
