import math

import numpy as np
import pytest

from natalloc import allocation as al
from natalloc.discrete import OutcomeTable, bind_distortion, collapse, natural_allocation_unlimited
from natalloc.distortion import ProportionalHazard
from natalloc.errors import DomainError
from natalloc.oracle import McConfig, enumerate_allocation, mc_equal_priority, ordering_sensitivity
from natalloc.reproduce import load_eg1, load_priority

from helpers import asset_levels, random_table, three_distortions

PRIORITY_ASSETS = (1000.0, 2000.0, 3272.0, 5000.0, 20000.0)


def test_analytic_matches_enumeration():
    rng = np.random.default_rng(9)
    for _ in range(200):
        t = random_table(rng, max_lines=4, max_rows=15, integer=bool(rng.integers(2)))
        assets = asset_levels(t, rng, 5)
        for d in three_distortions(rng):
            v = bind_distortion(collapse(t), d)
            ref = enumerate_allocation(t, d, assets)
            for k, a in enumerate(assets):
                for i in range(t.n_lines):
                    got = al.premium_cumulative(v, i, a)
                    assert abs(got - ref[k, i]) <= 1e-9 * max(1.0, abs(ref[k, i]))


def test_enumeration_on_eg1():
    t = load_eg1()
    ref = enumerate_allocation(t, ProportionalHazard(0.5))
    assert ref[0, 0] == pytest.approx(6.2048488, abs=1e-6)
    assert ref[0, 1] == pytest.approx(45.183836, abs=1e-6)


@pytest.fixture(scope="module")
def priority():
    port = load_priority()
    return port, port.view()


@pytest.mark.parametrize("a", PRIORITY_ASSETS)
def test_grid_matches_monte_carlo(priority, a):
    port, view = priority
    res = mc_equal_priority(port.marginals, a, McConfig())
    for i in range(2):
        got = al.loss_cumulative(view, i, a)
        assert abs(got - res.mean[i]) <= 4 * res.stderr[i]


def test_monte_carlo_is_seed_deterministic(priority, monkeypatch):
    port, _ = priority
    cfg = McConfig(n=50_000, seed=3, batch=7_000)
    first = mc_equal_priority(port.marginals, 3272.0, cfg)
    monkeypatch.setenv("NATALLOC_THREADS", "4")
    second = mc_equal_priority(port.marginals, 3272.0, cfg)
    assert np.array_equal(first.mean, second.mean)
    assert np.array_equal(first.stderr, second.stderr)
    other = mc_equal_priority(port.marginals, 3272.0, McConfig(n=50_000, seed=4, batch=7_000))
    assert not np.array_equal(first.mean, other.mean)


def test_monte_carlo_config_validation():
    with pytest.raises(DomainError):
        McConfig(n=0)


def test_ordering_sensitivity_on_eg1():
    t = load_eg1()
    rep = ordering_sensitivity(t, ProportionalHazard(0.5))
    assert not rep.empty
    # the rows with total 10 can be ordered two ways
    assert rep.n_permutations == 2
    assert rep.naive_min[0] == pytest.approx(6.200857, abs=1e-6)
    assert rep.naive_max[0] == pytest.approx(6.208543, abs=1e-6)
    assert np.all(rep.naive_min <= rep.collapsed + 1e-12)
    assert np.all(rep.collapsed <= rep.naive_max + 1e-12)


def test_ordering_sensitivity_without_ties():
    t = OutcomeTable(("A",), np.array([0.5, 0.5]), np.array([[1.0], [2.0]]))
    assert ordering_sensitivity(t, ProportionalHazard(0.5)).empty


def test_ordering_sensitivity_samples_beyond_cap():
    n = 12
    losses = np.column_stack([np.arange(n, dtype=float), n - np.arange(n, dtype=float)])
    t = OutcomeTable(("A", "B"), np.full(n, 1 / n), losses)
    rep = ordering_sensitivity(t, ProportionalHazard(0.6), seed=1, cap=50)
    assert rep.n_permutations == 50
    assert np.all(rep.naive_min <= rep.naive_max)
    assert rep.collapsed.sum() == pytest.approx(natural_allocation_unlimited(bind_distortion(collapse(t), ProportionalHazard(0.6))).sum())


def test_enumeration_size_limit():
    n = 100_001
    t = OutcomeTable(("A",), np.full(n, 1 / n), np.arange(n, dtype=float)[:, None])
    with pytest.raises(DomainError):
        enumerate_allocation(t, ProportionalHazard(0.5))


def test_enumeration_with_infinite_and_zero_assets():
    t = load_eg1()
    d = ProportionalHazard(0.5)
    ref = enumerate_allocation(t, d, (0.0, math.inf))
    assert np.all(ref[0] == 0.0)
