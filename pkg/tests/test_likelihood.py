"""Shock bounds, observation probabilities, dataset likelihood and gradient."""

import math

import numpy as np
from hypothesis import given, strategies as st

from adlearn.likelihood import (ChoiceData, ChoiceObservation, EpsilonBounds, FloorCounter,
                                compute_bounds, dataset_log_likelihood, loglik_and_grad,
                                obs_log_prob, pointwise_loglik, pointwise_loglik_matrix,
                                read_pointwise_csv, write_pointwise_csv)
from adlearn.model import BeliefState, Menu, expected_payoff, optimal_choice
from adlearn.theta import ParamLayout, from_unconstrained, to_unconstrained

from conftest import random_dataset, random_menu, random_theta


def obs_with(menu, chosen, belief=BeliefState()):
    return ChoiceObservation("a", "s", 1, chosen, menu, belief, 0, "m")


def bounds_for(obs, theta, traffic):
    a = theta.layout.advertiser_ids.index(obs.advertiser)
    s = theta.layout.site_ids.index(obs.site)
    m = theta.layout.months.index(obs.month)
    return compute_bounds(obs, gamma=theta.gamma[a], zeta=theta.zeta[a], xi=theta.xi[a],
                          eta=theta.eta[s], phi_tau=theta.phi[obs.tau], psi_m=theta.psi[m],
                          traffic=traffic[obs.site])


class TestComputeBounds:
    menu = Menu.from_pairs([(7, 100.0), (14, 180.0)])

    def kwargs(self, mu):
        # gamma * 0 impressions -> ratio 1; put log mu into xi
        return dict(gamma=0.5, zeta=0.01, xi=math.log(mu), eta=0.0, phi_tau=0.0, psi_m=0.0, traffic=10000)

    def test_outside_option_has_no_lower_bound(self):
        b = compute_bounds(obs_with(self.menu, 0), **self.kwargs(0.05))
        assert b.lower == -math.inf and math.isfinite(b.upper)

    def test_longest_has_no_upper_bound(self):
        b = compute_bounds(obs_with(self.menu, 14), **self.kwargs(0.05))
        assert b.upper == math.inf

    def test_derived_lower_bound(self):
        b = compute_bounds(obs_with(self.menu, 14), **self.kwargs(0.05))
        np.testing.assert_allclose(b.lower, math.log(80) - math.log(0.05 * 100 * math.log(1401 / 701)), rtol=1e-13)
        np.testing.assert_allclose(b.lower, 3.1401315665907017, rtol=1e-13)

    def test_lower_bound_is_preference_switch(self):
        """Brute-force grid: 14 days starts beating 7 days exactly at the lower bound."""
        b = compute_bounds(obs_with(self.menu, 14), **self.kwargs(0.05))
        grid = np.linspace(2.5, 3.5, 100_001)
        v7 = [expected_payoff(0.05, e, 0.01, 10000, 7, 100.0) for e in grid[::100]]
        v14 = [expected_payoff(0.05, e, 0.01, 10000, 14, 180.0) for e in grid[::100]]
        switch = grid[::100][np.argmax(np.array(v14) > np.array(v7))]
        assert abs(switch - b.lower) <= 1e-3

    def test_containment(self):
        """Any shock that makes x optimal lies inside x's bounds."""
        rng = np.random.default_rng(7)
        for _ in range(300):
            menu = random_menu(rng)
            mu, zeta, t = rng.lognormal(-3, 1), rng.uniform(0.011, 0.2), rng.uniform(2e4, 4e5)
            for eps in rng.normal(0, 2, 20):
                x = optimal_choice(menu, mu, eps, zeta, t)
                b = compute_bounds(obs_with(menu, x), gamma=0.5, zeta=zeta, xi=math.log(mu), eta=0,
                                   phi_tau=0, psi_m=0, traffic=t)
                assert b.lower - 1e-9 <= eps <= b.upper + 1e-9


class TestObsLogProb:
    def test_half(self):
        np.testing.assert_allclose(obs_log_prob(EpsilonBounds(-math.inf, 0.0), 1.0), math.log(0.5), rtol=1e-15)

    def test_erf_oracle(self):
        np.testing.assert_allclose(obs_log_prob(EpsilonBounds(-1.0, 1.0), 1.0),
                                   math.log(math.erf(1 / math.sqrt(2))), rtol=1e-14)
        np.testing.assert_allclose(math.exp(obs_log_prob(EpsilonBounds(-1.0, 1.0), 1.0)), 0.6826894921, rtol=1e-9)

    def test_zero_width_floors_and_counts(self):
        counter = FloorCounter()
        v = obs_log_prob(EpsilonBounds(0.3, 0.3), 1.0, counter=counter)
        assert v == math.log(1e-300)
        assert counter.hits == 1 and counter.evaluations == 1
        v = obs_log_prob(EpsilonBounds(0.3, 0.2), 1.0, floor=1e-200, counter=counter)
        assert v == math.log(1e-200) and counter.hits == 2

    @given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(0.01, 3), st.floats(0.2, 3))
    def test_probability_range_and_width_monotone(self, lo, w, extra, sigma):
        p1 = obs_log_prob(EpsilonBounds(lo, lo + w), sigma)
        p2 = obs_log_prob(EpsilonBounds(lo - extra, lo + w + extra), sigma)
        assert p1 <= 0 and math.exp(p1) > 0
        assert p2 >= p1


class TestDataset:
    def test_empty_is_zero(self, small_dataset):
        _, _, layout, data = small_dataset
        theta = random_theta(np.random.default_rng(0), layout)
        assert dataset_log_likelihood(data.subset(np.array([], dtype=int)), theta) == 0.0

    def test_matches_scalar_reference(self):
        obs, traffic, layout, data = random_dataset(1, n=1000)
        theta = random_theta(np.random.default_rng(1), layout)
        ref = [obs_log_prob(bounds_for(o, theta, traffic), theta.sigma) for o in obs]
        vec = pointwise_loglik(data, theta)
        np.testing.assert_allclose(vec, ref, rtol=1e-12, atol=1e-12)
        # ordered reduction equals a plain left-to-right loop bit for bit
        total = 0.0
        for v in vec:
            total += v
        assert dataset_log_likelihood(data, theta, reduction="ordered") == total

    def test_single_observation(self, small_dataset):
        obs, traffic, layout, data = small_dataset
        theta = random_theta(np.random.default_rng(2), layout)
        one = data.subset(np.array([3]))
        np.testing.assert_allclose(dataset_log_likelihood(one, theta),
                                   obs_log_prob(bounds_for(obs[3], theta, traffic), theta.sigma), rtol=1e-12)

    def test_pointwise_matrix_rows_and_csv(self, small_dataset, tmp_path):
        _, _, layout, data = small_dataset
        rng = np.random.default_rng(3)
        draws = [random_theta(rng, layout) for _ in range(3)]
        mat = pointwise_loglik_matrix(data, draws)
        assert mat.shape == (3, len(data))
        for d, th in zip(mat, draws):
            np.testing.assert_allclose(d.sum(), dataset_log_likelihood(data, th), rtol=1e-12)
        path = tmp_path / "pw.csv"
        write_pointwise_csv(path, mat, "# header")
        assert path.read_text().splitlines()[1] == "draw,obs_index,loglik"
        np.testing.assert_array_equal(read_pointwise_csv(path), mat)

    def test_one_by_one(self, small_dataset):
        obs, traffic, layout, data = small_dataset
        theta = random_theta(np.random.default_rng(4), layout)
        mat = pointwise_loglik_matrix(data.subset(np.array([0])), [theta])
        assert mat.shape == (1, 1)
        np.testing.assert_allclose(mat[0, 0], obs_log_prob(bounds_for(obs[0], theta, traffic), theta.sigma),
                                   rtol=1e-12)


def fd_gradient(f, u, h=1e-5):
    g = np.empty_like(u)
    for i in range(len(u)):
        e = np.zeros_like(u)
        e[i] = h
        g[i] = (f(u + e) - f(u - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0))


class TestGradient:
    def test_matches_finite_differences(self, small_dataset):
        _, _, layout, data = small_dataset
        rng = np.random.default_rng(5)
        for _ in range(3):
            u = to_unconstrained(random_theta(rng, layout), layout)
            f = lambda v: loglik_and_grad(data, from_unconstrained(v, layout))[0]  # noqa: E731
            _, g = loglik_and_grad(data, from_unconstrained(u, layout))
            assert rel_err(g, fd_gradient(f, u)) <= 1e-5

    def test_unbounded_observation_has_zero_gradient(self):
        layout = ParamLayout(1, 1, 1, ("a",), ("s",), ("m",))
        ob = ChoiceObservation("a", "s", 1, 0, Menu(()), BeliefState(), 0, "m")
        data = ChoiceData.from_observations([ob], {"s": 1e5}, layout)
        theta = random_theta(np.random.default_rng(0), layout)
        ll, g = loglik_and_grad(data, theta)
        assert ll == 0.0
        np.testing.assert_array_equal(g, 0.0)

    def test_sigma_widening_helps_wide_intervals(self):
        layout = ParamLayout(1, 1, 1, ("a",), ("s",), ("m",))
        menu = Menu.from_pairs([(7, 100.0), (14, 180.0), (30, 350.0)])
        # pick effects so that the 14-day interval straddles zero widely
        ob = ChoiceObservation("a", "s", 1, 14, menu, BeliefState(), 0, "m")
        data = ChoiceData.from_observations([ob], {"s": 10000.0}, layout)
        theta = random_theta(np.random.default_rng(1), layout)
        u = to_unconstrained(theta, layout)
        sl = layout.slices
        b = compute_bounds(ob, gamma=theta.gamma[0], zeta=theta.zeta[0], xi=0, eta=0, phi_tau=0,
                           psi_m=0, traffic=1e4)
        # shifting the total log match by d shifts both bounds by -d
        u[sl["xi"]] = (b.lower + b.upper) / 2 - theta.eta[0] - theta.phi[0] - theta.psi[0]
        u[sl["log_sigma"]] = math.log(0.1)
        _, g = loglik_and_grad(data, from_unconstrained(u, layout))
        f = lambda v: loglik_and_grad(data, from_unconstrained(v, layout))[0]  # noqa: E731
        fd = fd_gradient(f, u)[sl["log_sigma"]][0]
        assert fd < 0 and g[sl["log_sigma"]][0] < 0
        np.testing.assert_allclose(g[sl["log_sigma"]][0], fd, rtol=1e-5)

    def test_floor_counter(self, small_dataset):
        _, _, layout, data = small_dataset
        theta = random_theta(np.random.default_rng(6), layout)
        c = FloorCounter()
        loglik_and_grad(data, theta, c)
        assert c.evaluations == len(data)
