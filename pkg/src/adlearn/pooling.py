"""Cold-start CTR prediction from ad-image tags.

Advertisers are compared through the cosine similarity of their TF-IDF tag
vectors, and an advertiser's CTR at a site it never used is predicted as the
similarity-weighted mean of the CTRs other advertisers achieved there.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import DomainError

log = logging.getLogger(__name__)

MAX_TAGS_PER_IMAGE = 10


@dataclass
class TagCorpus:
    """Advertiser -> multiset of tags pooled over that advertiser's images."""

    tags: dict[str, Counter]

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, str]],
                  max_tags_per_image: int = MAX_TAGS_PER_IMAGE) -> "TagCorpus":
        """Build from (advertiser_id, image_id, tag) rows."""
        tags: dict[str, Counter] = {}
        per_image: Counter = Counter()
        for adv, image, tag in rows:
            if not isinstance(tag, str) or not tag.strip():
                raise DomainError(f"empty tag for advertiser {adv!r} image {image!r}")
            per_image[(adv, image)] += 1
            if per_image[(adv, image)] > max_tags_per_image:
                raise DomainError(f"image {image!r} of {adv!r} has more than {max_tags_per_image} tags")
            tags.setdefault(str(adv), Counter())[tag.strip()] += 1
        return cls(tags)

    @property
    def advertisers(self) -> list[str]:
        return sorted(self.tags)


@dataclass
class TfidfMatrix:
    advertiser_ids: tuple
    vocabulary: tuple
    weights: np.ndarray
    excluded: list = field(default_factory=list)


def build_tfidf(corpus: TagCorpus | Mapping[str, Iterable[str]]) -> TfidfMatrix:
    """Raw tag counts times ln(N / df).

    Advertisers with no tags are dropped (with a warning) before N and the
    document frequencies are computed.
    """
    tags = corpus.tags if isinstance(corpus, TagCorpus) else {a: Counter(t) for a, t in corpus.items()}
    excluded = sorted(a for a, c in tags.items() if sum(c.values()) == 0)
    if excluded:
        log.warning("advertisers without tags excluded: %s", ", ".join(excluded))
    ids = sorted(a for a in tags if a not in excluded)
    if len(ids) < 2:
        raise DomainError("TF-IDF needs at least two advertisers with tags")
    vocab = sorted({t for a in ids for t in tags[a]})
    col = {t: j for j, t in enumerate(vocab)}
    tf = np.zeros((len(ids), len(vocab)))
    for i, a in enumerate(ids):
        for t, n in tags[a].items():
            tf[i, col[t]] = n
    df = np.count_nonzero(tf, axis=0)
    idf = np.log(len(ids) / df)
    return TfidfMatrix(tuple(ids), tuple(vocab), tf * idf, excluded)


@dataclass
class SimilarityMatrix:
    advertiser_ids: tuple
    values: np.ndarray
    excluded: list = field(default_factory=list)

    def index(self) -> dict:
        return {a: i for i, a in enumerate(self.advertiser_ids)}


def cosine_matrix(tfidf: TfidfMatrix) -> SimilarityMatrix:
    """Pairwise cosine similarity; zero-norm rows are excluded and recorded."""
    norms = np.linalg.norm(tfidf.weights, axis=1)
    keep = norms > 0
    dropped = [a for a, k in zip(tfidf.advertiser_ids, keep) if not k]
    if dropped:
        log.warning("advertisers with zero TF-IDF norm excluded: %s", ", ".join(dropped))
    X = tfidf.weights[keep] / norms[keep, None]
    R = X @ X.T
    R = np.clip(0.5 * (R + R.T), 0.0, 1.0)
    np.fill_diagonal(R, 1.0)
    ids = tuple(a for a, k in zip(tfidf.advertiser_ids, keep) if k)
    return SimilarityMatrix(ids, R, list(tfidf.excluded) + dropped)


@dataclass
class KnownCtrTable:
    """site -> {advertiser: long-run CTR} for pairs with observed outcomes."""

    ctr: dict[str, dict[str, float]]

    def __post_init__(self):
        for s, row in self.ctr.items():
            for a, c in row.items():
                if not 0.0 <= c <= 1.0:
                    raise DomainError(f"CTR for {a!r} at {s!r} outside [0, 1]: {c}")

    @classmethod
    def from_totals(cls, advertiser_ids: Sequence[str], site_ids: Sequence[str],
                    impressions: np.ndarray, clicks: np.ndarray) -> "KnownCtrTable":
        """Pooled clicks / impressions over the whole window, per pair."""
        table: dict[str, dict[str, float]] = {}
        for i, a in enumerate(advertiser_ids):
            for j, s in enumerate(site_ids):
                if impressions[i, j] > 0:
                    table.setdefault(s, {})[a] = float(clicks[i, j] / impressions[i, j])
        return cls(table)


@dataclass(frozen=True)
class PooledPrediction:
    """Result of a pooled prediction; ``ctr`` is None when no peer carries weight."""

    ctr: float | None
    peer_count: int

    @property
    def available(self) -> bool:
        return self.ctr is not None


def predict_ctr(R: SimilarityMatrix, table: KnownCtrTable, advertiser: str, site: str) -> PooledPrediction:
    """Similarity-weighted mean of peers' CTRs at ``site``, never using the advertiser itself."""
    idx = R.index()
    known = table.ctr.get(site, {})
    if advertiser not in idx:
        return PooledPrediction(None, 0)
    i = idx[advertiser]
    peers = [(idx[j], c) for j, c in known.items() if j != advertiser and j in idx]
    if not peers:
        return PooledPrediction(None, 0)
    rows = np.array([p for p, _ in peers])
    cs = np.array([c for _, c in peers])
    w = R.values[i, rows]
    if not w.sum() > 0:
        return PooledPrediction(None, len(peers))
    return PooledPrediction(float(w @ cs / w.sum()), len(peers))


def predict_matrix(R: SimilarityMatrix, table: KnownCtrTable, advertiser_ids: Sequence[str],
                   site_ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Pooled predictions for every (advertiser, site); NaN where unavailable.

    Returns (ctr, peer_count), both shaped (advertisers, sites).
    """
    idx = R.index()
    n = len(R.advertiser_ids)
    out = np.full((len(advertiser_ids), len(site_ids)), np.nan)
    peers = np.zeros(out.shape, dtype=np.int64)
    rows = np.array([idx.get(a, -1) for a in advertiser_ids])
    has_row = rows >= 0
    W = R.values.copy()
    np.fill_diagonal(W, 0.0)
    for j, s in enumerate(site_ids):
        c = np.zeros(n)
        m = np.zeros(n)
        for a, v in table.ctr.get(s, {}).items():
            if a in idx:
                c[idx[a]] = v
                m[idx[a]] = 1.0
        num = W @ (m * c)
        den = W @ m
        cnt = m.sum() - m
        r = rows[has_row]
        with np.errstate(invalid="ignore", divide="ignore"):
            pred = np.where(den[r] > 0, num[r] / den[r], np.nan)
        out[has_row, j] = pred
        peers[has_row, j] = cnt[r].astype(np.int64)
    return out, peers


def write_predictions_csv(path, advertiser_ids, site_ids, ctr: np.ndarray, peers: np.ndarray,
                          header_comment: str | None = None) -> None:
    """``advertiser_id,site_id,ctr_pred,peer_count``; empty ctr_pred marks no prediction."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(header_comment.rstrip("\n") + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["advertiser_id", "site_id", "ctr_pred", "peer_count"])
        for i, a in enumerate(advertiser_ids):
            for j, s in enumerate(site_ids):
                v = ctr[i, j]
                w.writerow([a, s, format(v, ".17g") if np.isfinite(v) else "", int(peers[i, j])])


@dataclass(frozen=True)
class CalibrationBin:
    predicted_mean: float
    observed_mean: float
    ci_low: float
    ci_high: float
    n: int


def calibration_bins(predicted: Sequence[float], observed: Sequence[float], bins: int,
                     ids: Sequence | None = None, upper_quantile: float | None = 0.99,
                     n_boot: int = 1000, seed: int = 0, level: float = 0.95) -> list[CalibrationBin]:
    """Equal-count bins of observed outcomes by predicted value.

    Points with predictions above ``upper_quantile`` are dropped first. Ties
    are ordered by ``ids`` (default: input position). Constant predictions
    collapse to a single bin. Intervals are percentile bootstraps of the bin
    mean of observed values.
    """
    pred = np.asarray(predicted, dtype=float)
    obs = np.asarray(observed, dtype=float)
    if pred.shape != obs.shape or pred.ndim != 1:
        raise DomainError("predicted and observed must be equal-length sequences")
    if bins < 1:
        raise DomainError("bins must be positive")
    if bins > len(pred):
        raise DomainError(f"{bins} bins requested for {len(pred)} observations")
    keys = np.arange(len(pred)) if ids is None else np.asarray(ids)
    keep = np.ones(len(pred), bool)
    if upper_quantile is not None and len(pred):
        keep = pred <= np.quantile(pred, upper_quantile)
    pred, obs, keys = pred[keep], obs[keep], keys[keep]
    order = np.lexsort((keys, pred))
    pred, obs = pred[order], obs[order]
    if np.all(pred == pred[0]):
        bins = 1
    bins = min(bins, len(pred))
    rng = np.random.default_rng(seed)
    out = []
    a = (1 - level) / 2
    for part in np.array_split(np.arange(len(pred)), bins):
        o = obs[part]
        boot = o[rng.integers(0, len(o), size=(n_boot, len(o)))].mean(axis=1)
        lo, hi = np.quantile(boot, [a, 1 - a])
        out.append(CalibrationBin(float(pred[part].mean()), float(o.mean()), float(lo), float(hi), len(o)))
    return out


def calibration_slope(bins: Sequence[CalibrationBin]) -> float:
    """OLS slope of bin observed means on bin predicted means."""
    x = np.array([b.predicted_mean for b in bins])
    y = np.array([b.observed_mean for b in bins])
    if len(x) < 2 or np.all(x == x[0]):
        return float("nan")
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))
