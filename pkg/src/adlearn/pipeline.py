"""Command implementations: each reads a RunConfig and writes CSV outputs."""

from __future__ import annotations

import dataclasses
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .analytics import (CtrRecord, active_sites_series, cpc_by_retention, persistence_series,
                        variance_decomposition)
from .config import ConfigError, RunConfig
from .inference import Posterior, SamplerConfig, diagnostics, hmc_sample, map_estimate
from .inference.diagnostics import summary_rows
from .likelihood import pointwise_loglik_matrix, write_pointwise_csv
from .model import DomainError
from .panel import (MarketPanel, PurchasePanel, Transaction, build_choice_data,
                    month_labels_for_weeks)
from .pooling import (KnownCtrTable, TagCorpus, build_tfidf, calibration_bins, cosine_matrix,
                      predict_matrix, write_predictions_csv)
from .pricing import (PriceModel, PriceObservation, fit_price_model, impute_menu_availability,
                      predict_price)
from .simulator import (CounterfactualInputs, MarketConfig, compare_runs, generate_synthetic_market,
                        run_pairs)
from .theta import ThetaDraw, from_unconstrained

log = logging.getLogger(__name__)


class InputError(DomainError):
    """Input files failed validation; carries the list of issues."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__(f"{len(self.issues)} input problem(s); first: {self.issues[0]}")


def _check(issues):
    if issues:
        raise InputError(issues)


def _prov(cfg: RunConfig, command: str) -> str:
    return io.provenance_line(command, cfg.digest, cfg.seed)


def _out(cfg: RunConfig) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg.out_dir


# ---------------------------------------------------------------------------
# validation


def validate_inputs(cfg: RunConfig) -> list[io.Issue]:
    """Schema and invariant checks on every data file named in the config."""
    issues: list[io.Issue] = []
    parsed = {}
    parsers = {"transactions": io.parse_transactions, "sites": io.parse_sites,
               "tags": io.parse_tags, "menus": io.parse_menus,
               "advertisers": io.parse_advertisers, "predicted_ctr": io.parse_predicted_ctr}
    for key, parser in parsers.items():
        path = cfg.data.get(key)
        if path is None:
            continue
        if not Path(path).exists():
            issues.append(io.Issue(str(path), 0, f"data.{key} file does not exist"))
            continue
        value, problems = parser(path)
        parsed[key] = value
        issues.extend(problems)
    if "draws" in cfg.data:
        path = cfg.data["draws"]
        if not Path(path).exists():
            issues.append(io.Issue(str(path), 0, "data.draws file does not exist"))
        else:
            issues.extend(io.parse_draws(path)[3])
    sites = parsed.get("sites")
    if sites is not None:
        for key in ("transactions", "menus"):
            rows = parsed.get(key) or []
            unknown = sorted({r.site_id if key == "transactions" else r[0] for r in rows} - set(sites))
            if unknown:
                issues.append(io.Issue(str(cfg.data[key]), 0,
                                       f"site_id(s) not in sites file: {', '.join(unknown[:10])}"))
    joins = parsed.get("advertisers")
    if joins and parsed.get("transactions"):
        first: dict = {}
        for t in parsed["transactions"]:
            first[t.advertiser_id] = min(first.get(t.advertiser_id, t.week), t.week)
        late = sorted(a for a, w in first.items() if a in joins and joins[a] > w)
        if late:
            issues.append(io.Issue(str(cfg.data["advertisers"]), 0,
                                   f"join_week after first purchase for: {', '.join(late[:10])}"))
    return issues


# ---------------------------------------------------------------------------
# observed market assembly


@dataclass
class ObservedMarket:
    panel: MarketPanel
    purchases: PurchasePanel
    price_model: PriceModel
    transactions: list


def complete_weeks(model: PriceModel, n_weeks: int) -> PriceModel:
    """Copy of ``model`` with a week effect for every week 1..n_weeks.

    Weeks absent from the price data take the effect of the nearest known
    week (the earlier one on ties).
    """
    known = sorted(model.mu_w)
    mu_w = {w: model.mu_w[min(known, key=lambda k: (abs(k - w), k))] for w in range(1, n_weeks + 1)}
    return dataclasses.replace(model, mu_w={**model.mu_w, **mu_w})


def assemble_market(transactions: list[Transaction], traffic: dict[str, float],
                    menus: list | None = None, join_weeks: dict[str, int] | None = None,
                    start_date: str = "2007-01-01", n_weeks: int | None = None,
                    menu_window: int = 4) -> ObservedMarket:
    """Dense panel with smoothed menu prices from raw records.

    Availability comes from the menus file when given, otherwise from
    purchases within ``menu_window`` weeks; an option that was bought is
    always available. Prices are the price model's level-scale predictions,
    fitted on menu offers when available and on transactions otherwise.
    Weeks absent from the price data borrow the nearest week's effect.
    """
    site_ids = tuple(sorted(traffic))
    s_idx = {s: i for i, s in enumerate(site_ids)}
    unknown = sorted({t.site_id for t in transactions} - set(site_ids))
    if unknown:
        raise DomainError(f"transactions refer to unknown sites: {', '.join(unknown)}")
    join_weeks = dict(join_weeks or {})
    adv_ids = tuple(sorted(set(join_weeks) | {t.advertiser_id for t in transactions}))
    weeks = [t.week for t in transactions] + [m[1] for m in (menus or [])] + list(join_weeks.values())
    if not weeks:
        raise DomainError("no transactions or menus to build a market from")
    W = int(n_weeks or max(weeks))
    durations = np.array(sorted({t.days for t in transactions} | {m[2] for m in (menus or [])}))
    d_idx = {int(d): k for k, d in enumerate(durations)}
    S, K = len(site_ids), len(durations)

    if menus:
        price_obs = [PriceObservation(s, w, d, p) for s, w, d, p in menus]
    else:
        price_obs = [PriceObservation(t.site_id, t.week, t.days, t.price)
                     for t in transactions if t.price > 0]
    model = fit_price_model(price_obs)
    if not model.lam > 0:
        raise DomainError(f"estimated price elasticity of duration is {model.lam:.3g}; "
                          "smoothed menus would not increase with run length")
    smooth = complete_weeks(model, W)

    avail = np.zeros((S, W, K), dtype=bool)
    if menus:
        for s, w, d, _ in menus:
            if w <= W:
                avail[s_idx[s], w - 1, d_idx[d]] = True
    else:
        seen: dict = defaultdict(set)
        for t in transactions:
            seen[(t.site_id, t.week)].add(t.days)
        imputed = impute_menu_availability(seen, smooth, weeks=range(1, W + 1), window=menu_window)
        for (s, w), menu in imputed.items():
            for opt in menu.options:
                avail[s_idx[s], w - 1, d_idx[int(opt.days)]] = True
    for t in transactions:
        avail[s_idx[t.site_id], t.week - 1, d_idx[t.days]] = True

    prices = np.full((S, W, K), np.nan)
    for s, w, k in zip(*np.nonzero(avail)):
        if site_ids[s] not in model.mu_s:
            raise DomainError(f"site {site_ids[s]} has offers but no price observations")
        prices[s, w, k] = predict_price(smooth, site_ids[s], int(w) + 1, int(durations[k]))

    first_week: dict = {}
    for t in transactions:
        first_week[t.advertiser_id] = min(first_week.get(t.advertiser_id, t.week), t.week)
    join = np.array([join_weeks.get(a, first_week.get(a, 1)) - 1 for a in adv_ids], dtype=np.int64)
    month_of_week, labels = month_labels_for_weeks(W, start_date)
    panel = MarketPanel(adv_ids, site_ids, W, np.array([traffic[s] for s in site_ids]), durations,
                        avail, prices, join, month_of_week, labels)
    purchases = PurchasePanel.from_transactions(panel, transactions)
    return ObservedMarket(panel, purchases, model, list(transactions))


def load_market(cfg: RunConfig) -> ObservedMarket:
    tx, issues = io.parse_transactions(cfg.input("transactions"))
    traffic, more = io.parse_sites(cfg.input("sites"))
    issues += more
    menus = None
    if cfg.data.get("menus"):
        menus, more = io.parse_menus(cfg.data["menus"])
        issues += more
    joins = None
    if cfg.data.get("advertisers"):
        joins, more = io.parse_advertisers(cfg.data["advertisers"])
        issues += more
    _check(issues)
    est = cfg.estimate
    return assemble_market(tx, traffic, menus, joins, est.start_date, est.n_weeks, est.menu_window)


# ---------------------------------------------------------------------------
# simulate-market


def cmd_simulate_market(cfg: RunConfig) -> list[Path]:
    seed = cfg.require_seed()
    section = cfg.section("market")
    if "seed" in section:
        raise ConfigError("set the seed at top level, not in [market]")
    section = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    try:
        mc = MarketConfig(**section, seed=seed)
    except TypeError as exc:
        raise ConfigError(f"bad [market] section: {exc}") from None
    market = generate_synthetic_market(mc)
    out, prov = _out(cfg), _prov(cfg, "simulate-market")
    panel = market.panel
    written = [
        io.write_csv(out / "transactions.csv", io.TRANSACTIONS_COLUMNS,
                     ((t.advertiser_id, t.site_id, t.week, t.days, t.price, t.impressions, t.clicks)
                      for t in market.transactions()), prov),
        io.write_csv(out / "sites.csv", io.SITES_COLUMNS,
                     zip(panel.site_ids, panel.traffic), prov),
        io.write_csv(out / "tags.csv", io.TAGS_COLUMNS, market.tag_rows(), prov),
        io.write_csv(out / "menus.csv", io.MENUS_COLUMNS,
                     ((panel.site_ids[s], w + 1, int(panel.durations[k]), float(panel.prices[s, w, k]))
                      for s, w, k in zip(*np.nonzero(panel.avail))), prov),
        io.write_csv(out / "advertisers.csv", io.ADVERTISERS_COLUMNS,
                     zip(panel.advertiser_ids, panel.join_week + 1), prov),
        io.write_csv(out / "truth.csv", ("parameter", "value"),
                     market.truth.named_values().items(), prov),
        io.write_csv(out / "true_ctr.csv", ("advertiser_id", "site_id", "ctr"),
                     ((a, s, market.ctr[i, j]) for i, a in enumerate(panel.advertiser_ids)
                      for j, s in enumerate(panel.site_ids)), prov),
    ]
    return written


# ---------------------------------------------------------------------------
# estimate


def _sampler_config(cfg: RunConfig, seed: int) -> SamplerConfig:
    section = cfg.section("sampler")
    if "seed" in section or "jobs" in section:
        raise ConfigError("[sampler] must not set seed or jobs; use the top-level seed and threads")
    try:
        base = SamplerConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"bad [sampler] section: {exc}") from None
    return SamplerConfig(**{**{f: getattr(base, f) for f in base.__dataclass_fields__},
                            "seed": seed, "jobs": min(cfg.threads, base.chains)})


def cmd_estimate(cfg: RunConfig) -> list[Path]:
    seed = cfg.require_seed()
    market = load_market(cfg)
    est = cfg.estimate
    data = build_choice_data(market.panel, market.purchases, kappa=est.kappa)
    layout = market.panel.layout()
    posterior = Posterior(data, layout)
    start = map_estimate(posterior, np.zeros(layout.dim))
    if not start.converged:
        log.warning("MAP start did not converge: %s", start.message)
    sc = _sampler_config(cfg, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    inits = [start.u + est.init_jitter * rng.standard_normal(layout.dim) for _ in range(sc.chains)]
    result = hmc_sample(posterior, layout.dim, sc, init=inits, names=layout.unconstrained_names())

    draws = [[from_unconstrained(u, layout).named_values() for u in chain] for chain in result.draws]
    names = list(draws[0][0])
    values = np.array([[[d[n] for n in names] for d in chain] for chain in draws])
    diag = diagnostics(values, names, divergences=int(result.divergent.sum()),
                       floor_hits=result.floor_hits) if sc.samples >= 4 else None

    out, prov = _out(cfg), _prov(cfg, "estimate")
    rows = []
    for c in range(values.shape[0]):
        for i in range(values.shape[1]):
            rows.append((c + 1, i + 1, result.log_density[c, i], *values[c, i]))
    written = [io.write_csv(out / "draws.csv", (*io.DRAWS_PREFIX, *names), rows, prov)]
    if diag is not None:
        summ = summary_rows(values, names, diag)
        cols = ("parameter", "mean", "sd", "q05", "median", "q95", "rhat", "ess_bulk", "ess_tail", "flags")
        written.append(io.write_csv(out / "diagnostics.csv", cols,
                                    ([r[c] for c in cols] for r in summ), prov))
    sampler_rows = [(c + 1, result.step_size[c], result.accept_stat[c].mean(),
                     int(result.divergent[c].sum()), result.tree_depth[c].mean(),
                     result.n_leapfrog[c].mean()) for c in range(values.shape[0])]
    written.append(io.write_csv(out / "sampler.csv",
                                ("chain", "step_size", "mean_accept", "divergences",
                                 "mean_tree_depth", "mean_leapfrog"), sampler_rows, prov))
    written.append(io.write_csv(out / "run_summary.csv", ("quantity", "value"), [
        ("observations", len(data)), ("parameters", layout.dim),
        ("map_log_density", start.log_density), ("map_converged", int(start.converged)),
        ("divergences", int(result.divergent.sum())), ("floor_hits", int(result.floor_hits)),
        ("max_rhat", diag.max_rhat if diag else math.nan),
        ("min_ess_bulk", diag.min_ess_bulk if diag else math.nan)], prov))
    market.price_model.write_csv(out / "price_model.csv", prov)
    written.append(out / "price_model.csv")

    flat = result.flat
    k = min(est.pointwise_draws, len(flat))
    pick = np.unique(np.linspace(0, len(flat) - 1, k).round().astype(int))
    matrix = pointwise_loglik_matrix(data, [from_unconstrained(flat[i], layout) for i in pick])
    write_pointwise_csv(out / "pointwise_loglik.csv", matrix, prov)
    written.append(out / "pointwise_loglik.csv")
    return written


# ---------------------------------------------------------------------------
# pooling


def pooled_ctr(tag_rows, transactions: list[Transaction], advertiser_ids, site_ids,
               max_tags_per_image: int = 10):
    """Pooled predictions for every pair plus the known-CTR table behind them."""
    corpus = TagCorpus.from_rows(tag_rows, max_tags_per_image)
    R = cosine_matrix(build_tfidf(corpus))
    imp: dict = defaultdict(int)
    clk: dict = defaultdict(int)
    for t in transactions:
        imp[(t.advertiser_id, t.site_id)] += t.impressions
        clk[(t.advertiser_id, t.site_id)] += t.clicks
    a_idx = {a: i for i, a in enumerate(advertiser_ids)}
    s_idx = {s: j for j, s in enumerate(site_ids)}
    imp_m = np.zeros((len(advertiser_ids), len(site_ids)), dtype=np.int64)
    clk_m = np.zeros_like(imp_m)
    for (a, s), n in imp.items():
        if a in a_idx and s in s_idx:
            imp_m[a_idx[a], s_idx[s]] = n
            clk_m[a_idx[a], s_idx[s]] = clk[(a, s)]
    table = KnownCtrTable.from_totals(advertiser_ids, site_ids, imp_m, clk_m)
    pred, peers = predict_matrix(R, table, advertiser_ids, site_ids)
    return pred, peers, table


def cmd_pool_ctr(cfg: RunConfig) -> list[Path]:
    tags, issues = io.parse_tags(cfg.input("tags"))
    tx, more = io.parse_transactions(cfg.input("transactions"))
    issues += more
    traffic, more = io.parse_sites(cfg.input("sites"))
    issues += more
    _check(issues)
    adv_ids = sorted({a for a, _, _ in tags} | {t.advertiser_id for t in tx})
    site_ids = sorted(traffic)
    pred, peers, table = pooled_ctr(tags, tx, adv_ids, site_ids, cfg.pooling.max_tags_per_image)
    out, prov = _out(cfg), _prov(cfg, "pool-ctr")
    write_predictions_csv(out / "predicted_ctr.csv", adv_ids, site_ids, pred, peers, prov)
    written = [out / "predicted_ctr.csv"]

    a_idx = {a: i for i, a in enumerate(adv_ids)}
    s_idx = {s: j for j, s in enumerate(site_ids)}
    p_obs, c_obs, ids = [], [], []
    for s, row in sorted(table.ctr.items()):
        for a, c in sorted(row.items()):
            v = pred[a_idx[a], s_idx[s]]
            if np.isfinite(v):
                p_obs.append(v)
                c_obs.append(c)
                ids.append(f"{a}|{s}")
    if len(p_obs) >= cfg.pooling.bins:
        bins = calibration_bins(p_obs, c_obs, cfg.pooling.bins, ids=ids, n_boot=cfg.pooling.n_boot,
                                seed=cfg.seed or 0)
        written.append(io.write_csv(out / "calibration.csv",
                                    ("bin", "n", "predicted_mean", "observed_mean", "ci_low", "ci_high"),
                                    ((i + 1, b.n, b.predicted_mean, b.observed_mean, b.ci_low, b.ci_high)
                                     for i, b in enumerate(bins)), prov))
    else:
        log.warning("only %d leave-one-out predictions; calibration table skipped", len(p_obs))
    return written


# ---------------------------------------------------------------------------
# counterfactual


def _cf_job(args):
    thetas, regimes, inputs, seed, truncation, first = args
    return run_pairs(thetas, regimes, inputs, seed, truncation, keep_outcomes=False, first_draw=first)


def load_posterior_draws(path, layout, n_draws: int) -> list[ThetaDraw]:
    names, _, values, issues = io.parse_draws(path)
    _check(issues)
    if len(values) == 0:
        raise DomainError("draws file has no rows")
    k = min(n_draws, len(values))
    pick = np.unique(np.linspace(0, len(values) - 1, k).round().astype(int))
    try:
        return [ThetaDraw.from_named_values(dict(zip(names, values[i])), layout) for i in pick]
    except KeyError as exc:
        raise DomainError(f"draws file lacks parameter {exc}; was it estimated on this market?") from None


def cmd_counterfactual(cfg: RunConfig) -> list[Path]:
    seed = cfg.require_seed()
    market = load_market(cfg)
    panel = market.panel
    sc = cfg.scenario
    thetas = load_posterior_draws(cfg.input("draws"), panel.layout(), sc.n_draws)

    A, S, _ = panel.shape
    pooled = np.full((A, S), np.nan)
    if cfg.data.get("predicted_ctr"):
        table, issues = io.parse_predicted_ctr(cfg.data["predicted_ctr"])
        _check(issues)
        for i, a in enumerate(panel.advertiser_ids):
            for j, s in enumerate(panel.site_ids):
                pooled[i, j] = table.get((a, s), np.nan)
    elif cfg.data.get("tags"):
        tags, issues = io.parse_tags(cfg.data["tags"])
        _check(issues)
        pooled, _, _ = pooled_ctr(tags, market.transactions, panel.advertiser_ids, panel.site_ids,
                                  cfg.pooling.max_tags_per_image)
    inputs = CounterfactualInputs.build(panel, market.purchases, pooled, cfg.estimate.kappa,
                                       missing_pooled=sc.missing_pooled)

    jobs = max(1, min(cfg.threads, len(thetas)))
    chunks = np.array_split(np.arange(len(thetas)), jobs)
    tasks = [([thetas[i] for i in c], sc.regimes, inputs, seed, sc.truncation, int(c[0]))
             for c in chunks if len(c)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_cf_job, tasks))
    else:
        parts = [_cf_job(t) for t in tasks]
    pairs = [p for part in parts for p in part]
    if not all(p.shocks_shared for p in pairs):
        raise DomainError("paired runs did not share their shock streams")
    if not all(p.balanced for p in pairs):
        raise DomainError("advertiser spend and publisher revenue disagree in a run")

    adv_mask, site_mask = inputs.unit_masks()
    tables, rows = compare_runs(pairs, panel, sc.n_boot, seed, adv_mask, site_mask)
    out, prov = _out(cfg), _prov(cfg, "counterfactual")
    by = {(t.regime, t.metric): t for t in tables}
    regimes = [r for r in ("C_F", "C_P", "C_FP") if (r, "advertiser_spend") in by]
    adv_rows, pub_rows = [], []
    for r in regimes:
        sp, va, rv = by[(r, "advertiser_spend")], by[(r, "advertiser_valuation")], by[(r, "publisher_revenue")]
        for i, a in enumerate(panel.advertiser_ids):
            adv_rows.append((r, a, int(adv_mask[i]), sp.baseline[i], sp.counterfactual[i], sp.change[i],
                             va.baseline[i], va.counterfactual[i], va.change[i]))
        for j, s in enumerate(panel.site_ids):
            pub_rows.append((r, s, int(site_mask[j]), rv.baseline[j], rv.counterfactual[j], rv.change[j]))
    return [
        io.write_csv(out / "advertiser_outcomes.csv",
                     ("regime", "advertiser_id", "in_sample", "baseline_spend", "counterfactual_spend",
                      "spend_change", "baseline_valuation", "counterfactual_valuation",
                      "valuation_change"), adv_rows, prov),
        io.write_csv(out / "publisher_outcomes.csv",
                     ("regime", "site_id", "in_sample", "baseline_revenue", "counterfactual_revenue",
                      "revenue_change"), pub_rows, prov),
        io.write_csv(out / "paired_summary.csv",
                     ("regime", "metric", "median_change", "percent_change", "ci_low", "ci_high",
                      "n_units", "n_draws", "cell"),
                     ((r.regime, r.metric, r.median_change, r.percent_change, r.ci_low, r.ci_high,
                       r.n_units, r.n_draws, r.cell) for r in rows), prov),
    ]


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(cfg: RunConfig) -> list[Path]:
    tx, issues = io.parse_transactions(cfg.input("transactions"))
    joins = None
    if cfg.data.get("advertisers"):
        joins, more = io.parse_advertisers(cfg.data["advertisers"])
        issues += more
    _check(issues)
    an = cfg.analyze
    seed = cfg.seed or 0
    out, prov = _out(cfg), _prov(cfg, "analyze")
    written = []

    cpc = cpc_by_retention(tx)
    rows = [("continued", v) for v in sorted(cpc.continued)] + [("abandoned", v) for v in sorted(cpc.abandoned)]
    rows += [("continued", math.inf)] * len(cpc.zero_click_continued)
    rows += [("abandoned", math.inf)] * len(cpc.zero_click_abandoned)
    written.append(io.write_csv(out / "cpc_by_retention.csv", ("group", "cpc"), rows, prov))

    series = active_sites_series(tx, horizon_days=an.horizon_days)
    written.append(io.write_csv(out / "active_sites.csv", ("day", "mean_sites", "min_sites", "max_sites",
                                                            "advertisers"),
                                ((p.index, p.mean, p.ci_low, p.ci_high, p.n) for p in series), prov))

    pers = persistence_series(tx, joins, period=an.period_weeks, n_boot=an.n_boot, seed=seed)
    written.append(io.write_csv(out / "persistence.csv", ("period", "mean_jaccard", "ci_low", "ci_high",
                                                           "advertisers"),
                                ((p.index, p.mean, p.ci_low, p.ci_high, p.n) for p in pers), prov))

    imp: dict = defaultdict(int)
    clk: dict = defaultdict(int)
    for t in tx:
        imp[(t.advertiser_id, t.site_id)] += t.impressions
        clk[(t.advertiser_id, t.site_id)] += t.clicks
    records = [CtrRecord(a, s, clk[(a, s)] / n) for (a, s), n in sorted(imp.items()) if n > 0]
    try:
        anova = variance_decomposition(records)
        written.append(io.write_csv(out / "ctr_anova.csv", ("term", "df", "sum_sq", "percent"),
                                    ((r["term"], r["df"], r["sum_sq"], r["percent"]) for r in anova.rows()),
                                    prov))
    except DomainError as exc:
        log.warning("CTR variance decomposition skipped: %s", exc)
    written.append(io.write_csv(out / "cpc_summary.csv", ("quantity", "value"), [
        ("median_cpc_continued", cpc.median_continued), ("median_cpc_abandoned", cpc.median_abandoned),
        ("pairs_continued", len(cpc.continued) + len(cpc.zero_click_continued)),
        ("pairs_abandoned", len(cpc.abandoned) + len(cpc.zero_click_abandoned)),
        ("zero_click_pairs", len(cpc.zero_click_continued) + len(cpc.zero_click_abandoned))], prov))
    return written
