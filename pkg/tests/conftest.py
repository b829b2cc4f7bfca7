"""Shared generators for random menus, choice datasets and parameter draws."""

import numpy as np
import pytest

from adlearn.likelihood import ChoiceData, ChoiceObservation
from adlearn.model import BeliefState, Menu, N_TENURE_BUCKETS
from adlearn.theta import ParamLayout, ThetaDraw


def random_menu(rng, n_options=None):
    """Menu with increasing, roughly proportional prices."""
    k = n_options or int(rng.integers(1, 4))
    days = np.sort(rng.choice([3, 7, 14, 21, 30, 60], size=k, replace=False))
    per_day = rng.uniform(5, 30)
    prices = per_day * days ** rng.uniform(0.6, 0.95) * rng.uniform(0.9, 1.1)
    prices = np.maximum.accumulate(prices) + np.arange(k)  # strictly increasing
    return Menu.from_pairs(zip(days.tolist(), np.round(prices, 2).tolist()))


def random_theta(rng, layout: ParamLayout) -> ThetaDraw:
    A, S, M = layout.n_advertisers, layout.n_sites, layout.n_months
    gamma_bar = rng.uniform(0.001, 0.01)
    zeta_bar = rng.uniform(0.005, 0.05)
    return ThetaDraw.from_hierarchy(
        g=rng.lognormal(0, 0.5, A), gamma_bar=gamma_bar,
        zeta=layout.zeta_shift + rng.exponential(zeta_bar, A) + 1e-4,
        xi=rng.normal(-3, 0.5, A), eta=rng.normal(0, 0.5, S),
        phi=rng.normal(0, 0.2, N_TENURE_BUCKETS), psi=rng.normal(0, 0.2, M),
        sigma=rng.uniform(0.5, 1.5), zeta_bar=zeta_bar, layout=layout)


def random_observations(rng, n, layout: ParamLayout, traffic):
    obs = []
    for i in range(n):
        menu = random_menu(rng)
        chosen = int(rng.choice([0] + list(menu.days)))
        imp = int(rng.integers(0, 2_000_000)) if rng.random() < 0.6 else 0
        clk = int(rng.binomial(imp, 0.0005)) if imp else 0
        obs.append(ChoiceObservation(
            advertiser=layout.advertiser_ids[i % layout.n_advertisers],
            site=layout.site_ids[int(rng.integers(layout.n_sites))],
            week=1 + i // 10, chosen_days=chosen, menu=menu, belief=BeliefState(imp, clk),
            tau=int(rng.integers(N_TENURE_BUCKETS)), month=layout.months[int(rng.integers(layout.n_months))]))
    return obs


def random_dataset(seed, n=200, A=5, S=4, M=3):
    rng = np.random.default_rng(seed)
    layout = ParamLayout(A, S, M, tuple(f"a{i}" for i in range(A)), tuple(f"s{j}" for j in range(S)),
                         tuple(f"2007-{m + 1:02d}" for m in range(M)))
    traffic = dict(zip(layout.site_ids, rng.uniform(20_000, 420_000, S)))
    obs = random_observations(rng, n, layout, traffic)
    return obs, traffic, layout, ChoiceData.from_observations(obs, traffic, layout)


@pytest.fixture(scope="session")
def small_dataset():
    return random_dataset(0)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance criteria lines at the end of the run."""
    import sys
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS):
            terminalreporter.write_line(line)
