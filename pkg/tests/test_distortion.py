import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natalloc.discrete import LevelView, bind_distortion, collapse, rho_total
from natalloc.distortion import (
    SLOPE_CAP,
    Identity,
    PiecewiseLinear,
    ProportionalHazard,
    TVaRMixture,
    Wang,
    calibrate,
    eval_g,
    eval_g_prime,
    from_spec,
    price_via_tvar_mixture,
    tvar,
)
from natalloc.errors import CalibrationError, DomainError

from helpers import bound_view, random_piecewise, random_table

FAMILIES = [
    Identity(),
    ProportionalHazard(0.5),
    ProportionalHazard(0.9),
    Wang(0.755),
    Wang(2.0),
    PiecewiseLinear(((0, 0), (0.1, 0.4), (0.5, 0.8), (1, 1))),
]


def _toy_view():
    levels = np.array([0.0, 1.0, 3.0, 7.0, 10.0])
    p = np.array([0.3, 0.25, 0.2, 0.15, 0.1])
    return LevelView(("A",), levels, p, levels[:, None].copy())


@pytest.mark.parametrize("d", FAMILIES, ids=lambda d: repr(d))
def test_endpoints(d):
    assert d.g(0.0) == 0.0
    assert d.g(1.0) == 1.0


@pytest.mark.parametrize("d", FAMILIES, ids=lambda d: repr(d))
def test_concave_on_random_triples(d):
    rng = np.random.default_rng(7)
    s = np.sort(rng.uniform(0, 1, size=(10_000, 3)), axis=1)
    g = d.g(s)
    t = (s[:, 1] - s[:, 0]) / np.where(s[:, 2] > s[:, 0], s[:, 2] - s[:, 0], 1.0)
    chord = g[:, 0] + t * (g[:, 2] - g[:, 0])
    assert np.all(g[:, 1] >= chord - 1e-12)


@pytest.mark.parametrize("d", FAMILIES, ids=lambda d: repr(d))
def test_distortion_dominates_identity(d):
    s = np.linspace(0, 1, 10_000)
    assert np.all(d.g(s) >= s - 1e-15)


@pytest.mark.parametrize("d", [ProportionalHazard(0.3), ProportionalHazard(0.8), Wang(0.4), Wang(1.5)], ids=repr)
def test_derivative_matches_central_difference(d):
    s = np.linspace(0.01, 0.99, 500)
    h = 1e-6
    fd = (d.g(s + h) - d.g(s - h)) / (2 * h)
    gp = d.g_prime(s)
    assert np.all(np.abs(gp - fd) / np.maximum(1.0, gp) < 1e-4)


def test_slope_cap_at_zero():
    assert ProportionalHazard(0.5).g_prime(0.0) == SLOPE_CAP
    assert Wang(0.5).g_prime(0.0) == SLOPE_CAP
    assert Identity().g_prime(0.0) == 1.0


def test_piecewise_left_slope_at_knot():
    d = PiecewiseLinear(((0, 0), (0.5, 0.75), (1, 1)))
    assert d.g_prime(0.5) == pytest.approx(1.5)
    assert d.g_prime(0.5 + 1e-9) == pytest.approx(0.5)
    assert d.g(0.25) == pytest.approx(0.375)


def test_vectorized_and_scalar_agree():
    d = Wang(0.755)
    s = np.array([0.0, 0.1, 0.5, 0.9, 1.0])
    vec = d.g(s)
    assert isinstance(d.g(0.3), float)
    assert [d.g(float(x)) for x in s] == list(vec)
    assert eval_g(d, 0.3) == d.g(0.3)
    assert eval_g_prime(d, 0.3) == d.g_prime(0.3)


@pytest.mark.parametrize("bad", [-0.1, 1.1, float("nan")])
def test_outside_unit_interval_rejected(bad):
    with pytest.raises(DomainError):
        Wang(0.5).g(bad)


def test_wang_known_value():
    from scipy.stats import norm

    assert Wang(0.755).g(0.1) == pytest.approx(norm.cdf(norm.ppf(0.1) + 0.755), abs=1e-15)


def test_wang_continuous_at_endpoints():
    d = Wang(1.0)
    assert d.g(1e-300) < 1e-250
    assert 1.0 - d.g(1.0 - 1e-16) < 1e-15


@pytest.mark.parametrize(
    "args",
    [
        {"r": 0.0},
        {"r": 1.5},
    ],
)
def test_ph_parameter_range(args):
    with pytest.raises(DomainError):
        ProportionalHazard(**args)


def test_wang_negative_shift_rejected():
    with pytest.raises(DomainError):
        Wang(-0.1)


@pytest.mark.parametrize(
    "knots",
    [
        ((0, 0), (0.5, 0.3), (1, 1)),  # convex
        ((0, 0.1), (1, 1)),
        ((0, 0), (0.5, 0.9), (0.5, 0.95), (1, 1)),
        ((0, 0), (0.5, 1.2), (1, 1)),  # decreasing
    ],
)
def test_piecewise_validation(knots):
    with pytest.raises(DomainError):
        PiecewiseLinear(knots)


def test_mixture_weights_for_known_distortion():
    # g(s) = min(2s, 1) is TVaR at p = 0.5
    d = PiecewiseLinear(((0, 0), (0.5, 1), (1, 1)))
    m = d.to_mixture()
    assert m.weights == ((0.5, 1.0),)


def test_mixture_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(50):
        d = random_piecewise(rng)
        back = d.to_mixture().to_distortion()
        s = np.linspace(0, 1, 101)
        assert np.max(np.abs(back.g(s) - d.g(s))) < 1e-12


def test_mixture_validation():
    with pytest.raises(DomainError):
        TVaRMixture(((0.2, 0.5), (0.6, 0.4)))
    with pytest.raises(DomainError):
        TVaRMixture(((0.6, 0.5), (0.2, 0.5)))
    with pytest.raises(DomainError):
        TVaRMixture(((1.0, 1.0),))


def test_tvar_values():
    v = _toy_view()
    assert tvar(v, 0.0) == pytest.approx(v.mean)
    # top 10% is the level 10; top 25% is 0.1*10 + 0.15*7
    assert tvar(v, 0.9) == pytest.approx(10.0)
    assert tvar(v, 0.75) == pytest.approx((1.0 + 1.05) / 0.25)
    with pytest.raises(DomainError):
        tvar(v, 1.0)


def test_tvar_mixture_prices_like_distortion_on_random_views():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(1, 10_000)) if rng.uniform() < 0.05 else int(rng.integers(1, 60))
        levels = np.unique(np.round(rng.exponential(10, n), 6))
        p = rng.uniform(0.01, 1, len(levels))
        p /= p.sum()
        v = LevelView(("A",), levels, p, levels[:, None].copy())
        d = random_piecewise(rng)
        direct = rho_total(bind_distortion(v, d))
        via = price_via_tvar_mixture(d.to_mixture(), v)
        assert abs(direct - via) <= 1e-9 * max(1.0, abs(direct))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 3.0))
def test_spec_round_trip(r, lam):
    for d in (ProportionalHazard(r), Wang(lam), Identity()):
        again = from_spec(json.dumps(d.to_spec()))
        assert again == d


def test_from_spec_unknown_family():
    with pytest.raises(DomainError):
        from_spec({"family": "dual"})


def _forward_return(d, view, a):
    from natalloc.discrete import expected_limited

    prem = rho_total(bind_distortion(view, d), a)
    return (prem - expected_limited(view, a)) / (a - prem)


@pytest.mark.parametrize("family,theta", [("ph", 0.35), ("ph", 0.8), ("wang", 0.3), ("wang", 1.2)])
def test_calibration_round_trip(family, theta):
    view = _toy_view()
    a = 9.0
    d = ProportionalHazard(theta) if family == "ph" else Wang(theta)
    target = _forward_return(d, view, a)
    got = calibrate(family, view, a, target)
    param = got.r if family == "ph" else got.lam
    assert param == pytest.approx(theta, abs=1e-6)


def test_calibration_on_random_tables():
    rng = np.random.default_rng(5)
    done = 0
    while done < 20:
        t = random_table(rng, max_lines=2, max_rows=10, integer=False)
        view = collapse(t)
        a = float(np.quantile(t.totals, 0.8))
        if a <= 0 or len(view.levels) < 3:
            continue
        theta = float(rng.uniform(0.2, 0.9))
        target = _forward_return(ProportionalHazard(theta), view, a)
        if not target > 1e-6:
            continue
        assert calibrate("ph", view, a, target).r == pytest.approx(theta, abs=1e-6)
        done += 1


def test_calibrate_identity_fails():
    with pytest.raises(CalibrationError):
        calibrate("identity", _toy_view(), 9.0, 0.1)


def test_calibrate_unreachable_target_reports_range():
    with pytest.raises(CalibrationError) as info:
        calibrate("ph", _toy_view(), 9.0, 1e6)
    lo, hi = info.value.achieved
    assert hi < 1e6 and lo >= 0


def test_calibrate_rejects_nonpositive_target():
    with pytest.raises(DomainError):
        calibrate("wang", _toy_view(), 9.0, 0.0)


def test_bound_view_prices_with_distortion():
    rng = np.random.default_rng(0)
    t = random_table(rng)
    v = bound_view(t, ProportionalHazard(0.5))
    assert rho_total(v) >= v.mean - 1e-12
    assert math.isclose(rho_total(bound_view(t, Identity())), v.mean, rel_tol=1e-12, abs_tol=1e-12)
