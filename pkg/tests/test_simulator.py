"""Synthetic markets, scenario states, the weekly engine, welfare and summaries."""

import dataclasses
import math

import numpy as np
import pytest
from scipy import stats

from adlearn.model import (ORACLE_IMPRESSIONS, BeliefState, DomainError, expected_ctr, optimal_choice,
                           tau_bucket)
from adlearn.simulator import (CounterfactualInputs, MarketConfig, PairedRun, ScenarioSpec, bootstrap_median_ci,
                               compare_runs, format_cell, generate_synthetic_market, init_information_state,
                               keyed_uniforms, oracle_state, run_pairs, run_scenario, scenario_shocks,
                               simulate_path, truncation_bounds, true_welfare)

SMALL = MarketConfig(n_advertisers=8, n_sites=4, n_weeks=10, seed=3, late_join_fraction=0.3)


@pytest.fixture(scope="module")
def market():
    return generate_synthetic_market(SMALL)


@pytest.fixture(scope="module")
def inputs(market):
    return CounterfactualInputs.build(market.panel, market.purchases, market.ctr)


class TestGenerator:
    def test_default_scale(self):
        c = MarketConfig()
        assert (c.n_advertisers, c.n_sites, c.n_weeks) == (100, 20, 27)
        assert (c.traffic_min, c.traffic_max) == (20_000, 420_000)

    def test_traffic_endpoints(self, market):
        np.testing.assert_allclose(market.panel.traffic[[0, -1]], [20_000, 420_000], rtol=1e-12)

    def test_bit_identical(self, market):
        again = generate_synthetic_market(SMALL)
        assert again.transactions() == market.transactions()
        assert again.ctr.tobytes() == market.ctr.tobytes()
        assert again.tags == market.tags

    def test_seed_changes_market(self, market):
        other = generate_synthetic_market(dataclasses.replace(SMALL, seed=4))
        assert other.ctr.tobytes() != market.ctr.tobytes()

    def test_overoptimism(self):
        c = MarketConfig()
        np.testing.assert_allclose(c.implied_gamma_bar * math.log(2), 5 * 0.00045, rtol=1e-12)

    def test_invalid(self):
        with pytest.raises(DomainError):
            MarketConfig(n_sites=0)
        with pytest.raises(DomainError):
            MarketConfig(traffic_min=5, traffic_max=1)

    def test_keyed_uniforms(self):
        u = keyed_uniforms(1, "eps", 2, (3, 4, 5))
        assert np.all((u > 0) & (u < 1))
        np.testing.assert_array_equal(u, keyed_uniforms(1, "eps", 2, (3, 4, 5)))
        assert not np.array_equal(u, keyed_uniforms(1, "eps", 3, (3, 4, 5)))
        assert not np.array_equal(u, keyed_uniforms(1, "clicks", 2, (3, 4, 5)))


class TestInformationState:
    def test_baseline_never_advertised(self):
        s = init_information_state("B", BeliefState(), False, None, None)
        assert s == BeliefState() and expected_ctr(s, 0.003) / 0.003 == 1.0

    def test_full_information(self):
        s = init_information_state("C_F", BeliefState(10, 0), True, 0.0005, None)
        assert s == BeliefState(ORACLE_IMPRESSIONS, 5 * 10**8)
        np.testing.assert_allclose(expected_ctr(s, 0.002) / 0.002, 0.0005 / 0.002, rtol=1e-6)
        # unobserved pairs keep their history under C_F
        assert init_information_state("C_F", BeliefState(10, 1), False, None, 0.1) == BeliefState(10, 1)

    def test_combined_equals_pooled_off_data(self):
        a = init_information_state("C_FP", BeliefState(), False, None, 0.0007)
        assert a == init_information_state("C_P", BeliefState(), False, None, 0.0007)

    def test_pooled_needs_ctr(self):
        with pytest.raises(DomainError):
            init_information_state("C_P", BeliefState(), False, None, None)
        with pytest.raises(DomainError):
            init_information_state("C_X", BeliefState(), False, None, None)

    def test_vectorised_matches_scalar(self, inputs):
        for r in ("B", "C_F", "C_P", "C_FP"):
            imp, clk = inputs.initial_states(ScenarioSpec(r))
            for a, s in [(0, 0), (1, 2), (5, 3)]:
                obs = bool(inputs.observed[a, s])
                ref = init_information_state(r, BeliefState(), obs,
                                             inputs.ctr_observed[a, s] if obs else None, inputs.ctr_pooled[a, s])
                assert (imp[a, s], clk[a, s]) == (ref.impressions, ref.clicks)

    def test_choice_sets(self, inputs):
        assert ScenarioSpec("B").choice_set == "observed" and ScenarioSpec("C_P").expanded
        with pytest.raises(DomainError):
            ScenarioSpec("C_F", choice_set="all")
        np.testing.assert_array_equal(inputs.choice_mask(ScenarioSpec("C_F")), inputs.observed)
        assert inputs.choice_mask(ScenarioSpec("C_FP")).all()


class TestMissingPooled:
    def pooled_with_hole(self, market):
        pooled = market.ctr.copy()
        observed = market.purchases.observed_pairs()
        hole = tuple(np.argwhere(~observed)[0])
        pooled[hole] = np.nan
        return pooled, hole

    def test_error_mode_names_pair(self, market):
        pooled, (a, s) = self.pooled_with_hole(market)
        inp = CounterfactualInputs.build(market.panel, market.purchases, pooled)
        with pytest.raises(DomainError, match=market.panel.advertiser_ids[a]):
            inp.initial_states(ScenarioSpec("C_P"))

    def test_restrict_mode_drops_pair(self, market):
        pooled, hole = self.pooled_with_hole(market)
        inp = CounterfactualInputs.build(market.panel, market.purchases, pooled, missing_pooled="restrict")
        assert not inp.choice_mask(ScenarioSpec("C_P"))[hole]
        imp, _ = inp.initial_states(ScenarioSpec("C_P"))
        assert imp[hole] == 0
        out = run_scenario(market.truth, ScenarioSpec("C_P"), inp, seed=1)
        assert not out.decided[hole].any()

    def test_bad_mode(self, market):
        with pytest.raises(DomainError):
            CounterfactualInputs.build(market.panel, market.purchases, market.ctr, missing_pooled="ignore")


def no_shock_run(market, theta, ctr_init):
    A, S, W = market.panel.shape
    imp0, clk0 = oracle_state(ctr_init)
    return simulate_path(market.panel, theta, np.zeros((A, S, W)), market.ctr,
                         keyed_uniforms(0, "clicks", 0, (A, S, W)), imp0, clk0, np.ones((A, S), bool))


class TestEngine:
    def test_no_match_no_spend(self, market):
        theta = dataclasses.replace(market.truth, xi=np.full(8, -50.0))
        out = no_shock_run(market, theta, market.ctr)
        assert out.spend_cents().sum() == 0 and not out.k.any()

    def test_brute_force_oracle_path(self, market):
        """Oracle beliefs at truth and zero shocks: the path is the per-week myopic optimum."""
        theta = market.truth
        out = no_shock_run(market, theta, market.ctr)
        p = market.panel
        A, S, W = p.shape
        month = p.month_param_index()
        imp0, clk0 = oracle_state(market.ctr)
        for a in range(A):
            for s in range(S):
                state, next_ok, first = BeliefState(int(imp0[a, s]), int(clk0[a, s])), 0, None
                for w in range(W):
                    if w < p.join_week[a] or w < next_ok:
                        assert not out.decided[a, s, w]
                        continue
                    tau = tau_bucket(None if first is None else w - first)
                    mu = (expected_ctr(state, theta.gamma[a]) / theta.gamma[a]) * math.exp(
                        theta.xi[a] + theta.eta[s] + theta.phi[tau] + theta.psi[month[w]])
                    x = optimal_choice(p.menu(s, w), mu, 0.0, theta.zeta[a], p.traffic[s])
                    assert out.days[a, s, w] == x
                    if x:
                        state = BeliefState(state.impressions + int(out.impressions[a, s, w]),
                                            state.clicks + int(out.clicks[a, s, w]))
                        first = w if first is None else first
                        next_ok = w + (1 if x <= 7 else math.ceil(x / 7))

    def test_blocking(self, market):
        o = market.outcome
        for a, s, w in zip(*np.nonzero(o.days > 7)):
            blocked = math.ceil(o.days[a, s, w] / 7)
            assert not o.decided[a, s, w + 1: w + blocked].any()

    def test_accounting_and_beliefs(self, market, inputs):
        for r in ("B", "C_F", "C_P", "C_FP"):
            out = run_scenario(market.truth, ScenarioSpec(r), inputs, seed=5)
            assert out.total_spend() == out.total_revenue()
            assert np.all(out.clicks <= out.impressions)
            imp0, clk0 = inputs.initial_states(ScenarioSpec(r))
            np.testing.assert_array_equal(out.final_imp, imp0 + out.impressions.sum(axis=2))
            np.testing.assert_array_equal(out.final_clk, clk0 + out.clicks.sum(axis=2))
            # impressions are round(t x)
            a, s, w = np.nonzero(out.k)
            np.testing.assert_array_equal(out.impressions[a, s, w],
                                          np.round(market.panel.traffic[s] * out.days[a, s, w]))

    def test_first_week_equivalence(self, market):
        """With gamma equal to the CTR, the oracle ratio is one, as with no data."""
        ctr = np.repeat(market.truth.gamma[:, None], 4, axis=1)
        imp, clk = oracle_state(ctr)
        ratio = (1 + clk) / (1 + market.truth.gamma[:, None] * imp)
        np.testing.assert_allclose(ratio, 1.0, rtol=1e-6)


class TestShocks:
    def test_truncated_shock_distribution(self, market, inputs):
        theta = market.truth
        lo, hi = truncation_bounds(theta, inputs)
        cd = inputs.choice_data
        i = int(np.argmax(cd.has_lo & cd.has_up)) if (cd.has_lo & cd.has_up).any() else int(np.argmax(cd.has_lo))
        a, s, w = cd.adv[i], cd.site[i], cd.weeks[i] - 1
        a_, b_ = lo[a, s, w], hi[a, s, w]
        assert np.isfinite(a_) or np.isfinite(b_)
        draws = np.array([scenario_shocks(theta, inputs, 11, d)[a, s, w] for d in range(10_000)])
        assert np.all((draws >= a_) & (draws <= b_))
        ref = stats.truncnorm(a_ / theta.sigma, b_ / theta.sigma, scale=theta.sigma)
        assert stats.kstest(draws, ref.cdf).statistic < 1.63 / math.sqrt(10_000)

    def test_untruncated_off_data(self, market, inputs):
        eps = scenario_shocks(market.truth, inputs, 2, 0)
        raw = scenario_shocks(market.truth, inputs, 2, 0, truncate=False)
        lo, hi = truncation_bounds(market.truth, inputs)
        free = np.isinf(lo) & np.isinf(hi)
        np.testing.assert_allclose(eps[free], raw[free], rtol=1e-12)

    @pytest.mark.parametrize("truncation", ["all", "baseline"])
    def test_pairing(self, market, inputs, truncation):
        pairs = run_pairs([market.truth] * 2, ["C_F", "C_P", "C_FP"], inputs, seed=8, truncation=truncation)
        assert len(pairs) == 6
        for p in pairs:
            # at the true theta the truncated baseline replays the data, so under "baseline"
            # truncation its decisions may all be unshared
            assert p.shared_mask().any() or truncation == "baseline"
            assert p.shared_shocks_identical()
            assert p.summary().balanced

    def test_bad_truncation(self, market, inputs):
        with pytest.raises(DomainError):
            run_pairs([market.truth], ["C_F"], inputs, seed=0, truncation="none")


class TestWelfare:
    def test_zero_purchases(self, market):
        theta = dataclasses.replace(market.truth, xi=np.full(8, -50.0))
        out = no_shock_run(market, theta, market.ctr)
        np.testing.assert_array_equal(true_welfare(out, market.ctr, theta, market.panel), 0.0)

    def test_oracle_ratio_equals_belief_ratio(self, market):
        """Under oracle beliefs at truth the realised payoff is the payoff the advertiser expected."""
        theta = market.truth
        out = no_shock_run(market, theta, market.ctr)
        w = true_welfare(out, market.ctr, theta, market.panel)
        p = market.panel
        month = p.month_param_index()
        expected = np.zeros(8)
        imp0, clk0 = oracle_state(market.ctr)
        for a, s, wk in zip(*np.nonzero(out.k)):
            state = BeliefState(int(imp0[a, s] + out.impressions[a, s, :wk].sum()),
                                int(clk0[a, s] + out.clicks[a, s, :wk].sum()))
            mu = expected_ctr(state, theta.gamma[a]) / theta.gamma[a] * math.exp(
                theta.xi[a] + theta.eta[s] + theta.phi[out.tau[a, s, wk]] + theta.psi[month[wk]])
            x = out.days[a, s, wk]
            expected[a] += mu * math.log1p(p.traffic[s] * x * theta.zeta[a]) / theta.zeta[a] \
                - out.price_cents[a, s, wk] / 100
        # belief states drift by at most a few thousand impressions against 10^12 pseudo-counts
        np.testing.assert_allclose(w, expected, rtol=1e-6, atol=1e-6)

    def test_oracle_uses_floored_state(self, market):
        n, c = oracle_state(np.array([0.00123456789012345]))
        assert n[0] == 10**12 and c[0] == math.floor(10**12 * 0.00123456789012345)


class TestCompare:
    def test_identical_runs_zero_change(self, market, inputs):
        base = run_scenario(market.truth, ScenarioSpec("B"), inputs, seed=1)
        wb = true_welfare(base, inputs.click_ctr(), market.truth, market.panel)
        pair = PairedRun(0, "C_F", base, base, wb, wb)
        _, rows = compare_runs([pair], market.panel, n_boot=50)
        assert all(r.median_change == 0 and r.ci_low == 0 and r.ci_high == 0 for r in rows)

    def test_median_matches_sort(self, market, inputs):
        pairs = run_pairs([market.truth] * 3, ["C_P"], inputs, seed=4, keep_outcomes=False)
        tables, rows = compare_runs(pairs, market.panel, n_boot=100)
        spend = next(t for t in tables if t.metric == "advertiser_spend")
        ch = np.sort(spend.change)
        # eight advertisers: drop one to get an odd-length vector
        odd = ch[1:]
        assert np.median(odd) == odd[len(odd) // 2]
        row = next(r for r in rows if r.metric == "advertiser_spend")
        assert row.median_change == pytest.approx((ch[3] + ch[4]) / 2, abs=1e-12)
        assert row.n_draws == 3 and row.n_units == 8

    def test_masks(self, market, inputs):
        pairs = run_pairs([market.truth], ["C_F"], inputs, seed=4, keep_outcomes=False)
        adv, site = inputs.unit_masks()
        _, rows = compare_runs(pairs, market.panel, n_boot=20, advertisers=adv, sites=site)
        assert next(r for r in rows if r.metric == "publisher_revenue").n_units == int(site.sum())
        with pytest.raises(DomainError):
            compare_runs([], market.panel)

    def test_format_cell(self):
        assert format_cell(-180.4, -22.06) == "-$180 (-22.1%)"
        assert format_cell(2756, float("nan")) == "$2,756 (n/a)"

    def test_bootstrap_interval_contains_median(self):
        x = np.random.default_rng(0).normal(3, 1, 301)
        lo, hi = bootstrap_median_ci(x, np.random.default_rng(1), 500)
        assert lo <= np.median(x) <= hi
