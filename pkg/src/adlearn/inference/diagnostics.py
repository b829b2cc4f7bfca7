"""Convergence diagnostics: rank-normalised split R-hat, bulk and tail ESS."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from ..model import DomainError


@dataclass
class ChainDiagnostics:
    names: list[str]
    rhat: np.ndarray
    ess_bulk: np.ndarray
    ess_tail: np.ndarray
    divergences: int = 0
    floor_hits: int = 0
    flags: dict[str, list[str]] = field(default_factory=dict)

    @property
    def max_rhat(self) -> float:
        return float(np.nanmax(self.rhat)) if np.any(np.isfinite(self.rhat)) else math.nan

    @property
    def min_ess_bulk(self) -> float:
        return float(np.nanmin(self.ess_bulk)) if np.any(np.isfinite(self.ess_bulk)) else math.nan

    def rows(self) -> list[dict]:
        return [
            {"parameter": n, "rhat": float(r), "ess_bulk": float(b), "ess_tail": float(t),
             "flags": ";".join(self.flags.get(n, []))}
            for n, r, b, t in zip(self.names, self.rhat, self.ess_bulk, self.ess_tail)
        ]


def _split(x: np.ndarray) -> np.ndarray:
    """(chains, draws) -> (2 * chains, draws // 2), dropping a middle draw if odd."""
    n = x.shape[1]
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half:]], axis=0)


def _rank_normalise(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    m, n = x.shape
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if not W > 0:
        return math.inf if B > 0 else math.nan
    var_hat = (n - 1) / n * W + B / n
    return math.sqrt(var_hat / W)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[1]
    size = 1 << (2 * n - 1).bit_length()
    c = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(c, n=size, axis=1)
    return np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n] / n


def _ess(x: np.ndarray) -> float:
    """Effective sample size with Geyer's initial monotone sequence."""
    m, n = x.shape
    acov = _autocov(x)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if not var_plus > 0:
        return math.nan
    rho = np.zeros(n)
    rho[0] = 1.0
    even = 1.0
    odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = odd
    t = 1
    while t < n - 3 and even + odd > 0:
        even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if even + odd >= 0:
            rho[t + 1], rho[t + 2] = even, odd
        t += 2
    max_t = t - 2
    if rho[max_t + 1] > 0:
        max_t += 1
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[: max_t + 1].sum() + rho[max_t + 1]
    tau = max(tau, 1.0 / math.log10(total))
    return total / tau


def rhat(x: np.ndarray) -> float:
    """max of bulk and folded rank-normalised split R-hat for one parameter."""
    s = _split(x)
    bulk = _rhat(_rank_normalise(s))
    folded = _rhat(_rank_normalise(np.abs(s - np.median(s))))
    if math.isinf(bulk) or math.isinf(folded):
        return math.inf
    if math.isnan(bulk) or math.isnan(folded):
        return math.nan
    return max(bulk, folded)


def ess_bulk(x: np.ndarray) -> float:
    return _ess(_rank_normalise(_split(x)))


def ess_tail(x: np.ndarray) -> float:
    s = _split(x)
    lo, hi = np.quantile(s, [0.05, 0.95])
    return min(_ess((s <= lo).astype(float)), _ess((s <= hi).astype(float)))


def diagnostics(chains: np.ndarray, names: list[str] | None = None,
                divergences: int = 0, floor_hits: int = 0) -> ChainDiagnostics:
    """Diagnostics for draws shaped (chains, draws) or (chains, draws, parameters)."""
    x = np.asarray(chains, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise DomainError("draws must be (chains, draws[, parameters])")
    if x.shape[1] < 4:
        raise DomainError("at least 4 draws per chain are required")
    p = x.shape[2]
    names = list(names) if names is not None else [f"p{i}" for i in range(p)]
    r, eb, et = np.empty(p), np.empty(p), np.empty(p)
    flags: dict[str, list[str]] = {}
    for j in range(p):
        col = x[:, :, j]
        with np.errstate(invalid="ignore", divide="ignore"):
            r[j] = rhat(col)
            eb[j] = ess_bulk(col)
            et[j] = ess_tail(col)
        f = []
        if np.all(col == col.flat[0]):
            f.append("constant")
        if math.isnan(r[j]):
            f.append("rhat_undefined")
        elif math.isinf(r[j]):
            f.append("rhat_infinite")
        if not np.isfinite(eb[j]) or not np.isfinite(et[j]):
            f.append("ess_degenerate")
        if f:
            flags[names[j]] = f
    return ChainDiagnostics(names, r, eb, et, int(divergences), int(floor_hits), flags)


def summary_rows(draws: np.ndarray, names: list[str], diag: ChainDiagnostics) -> list[dict]:
    """Per-parameter mean, sd, 5%/95% quantiles and diagnostics."""
    flat = np.asarray(draws).reshape(-1, len(names))
    q05, q50, q95 = np.quantile(flat, [0.05, 0.5, 0.95], axis=0)
    rows = diag.rows()
    for j, row in enumerate(rows):
        row.update(mean=float(flat[:, j].mean()), sd=float(flat[:, j].std(ddof=1)),
                   q05=float(q05[j]), median=float(q50[j]), q95=float(q95[j]))
    return rows
