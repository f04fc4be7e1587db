from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gameopt.market import MarketParams, PiecewiseConstantPath, Scheme, crr_step_params, stock_path_from_signs

params_st = st.builds(
    MarketParams,
    z=st.floats(1.0, 500.0),
    r=st.floats(0.0, 0.2),
    kappa=st.floats(0.05, 1.0),
    T=st.floats(0.1, 5.0),
)


def test_hand_market_step_law(hand_market):
    d = crr_step_params(hand_market, 1)
    assert d.p_up == pytest.approx(1 / 3, rel=1e-14)
    assert d.up == pytest.approx(2.0, rel=1e-14)
    assert d.down == pytest.approx(0.5, rel=1e-14)
    assert d.r_n == 0.0


@given(params_st, st.integers(1, 5000))
def test_symmetric_scheme_half_probability(p, n):
    d = crr_step_params(p, n, Scheme.SYMMETRIC)
    assert d.p_up == 0.5
    h = p.kappa * math.sqrt(p.T / n)
    drift = (p.r - 0.5 * p.kappa**2) * p.T / n
    assert d.log_up == pytest.approx(drift + h, rel=1e-12, abs=1e-15)
    assert d.log_down == pytest.approx(drift - h, rel=1e-12, abs=1e-15)


def test_martingale_probability_high_precision():
    mpmath.mp.dps = 40
    exact = 1 / (mpmath.e ** (mpmath.mpf("0.2") * mpmath.sqrt(mpmath.mpf(1) / 100)) + 1)
    d = crr_step_params(MarketParams(100, 0.05, 0.2, 1.0), 100)
    assert d.p_up == pytest.approx(float(exact), rel=1e-14)
    assert abs(d.p_up - 0.4950002) < 1e-7


@given(params_st, st.integers(1, 5000))
def test_martingale_identity(p, n):
    d = crr_step_params(p, n)
    lhs = d.p_up * math.exp(d.log_up) + (1 - d.p_up) * math.exp(d.log_down)
    assert lhs == pytest.approx(1.0 + d.r_n, rel=1e-12)
    assert d.r_n == pytest.approx(math.expm1(p.r * p.T / n), rel=1e-14, abs=0)
    # symmetric log moves around the drift
    h = p.kappa * math.sqrt(p.T / n)
    assert abs(d.log_up + d.log_down - 2 * p.r * p.T / n) <= 4 * np.spacing(h + p.r * p.T / n)


@pytest.mark.parametrize("bad", [dict(z=0.0), dict(kappa=0.0), dict(T=-1.0), dict(r=-0.01), dict(z=math.inf),
                                 dict(r=math.nan)])
def test_market_params_rejects_invalid(bad):
    kw = {"z": 100.0, "r": 0.05, "kappa": 0.3, "T": 1.0, **bad}
    with pytest.raises(ValueError):
        MarketParams(**kw)


@pytest.mark.parametrize("n", [0, -3, 2.5])
def test_step_count_validation(market, n):
    with pytest.raises(ValueError):
        crr_step_params(market, n)


def test_empty_signs_constant_path(market):
    path = stock_path_from_signs(market, crr_step_params(market, 8), [], horizon=market.T)
    assert np.all(path.values == market.z)
    assert path.value_at(0.7) == market.z


def test_hand_path_up_move(hand_market):
    d = crr_step_params(hand_market, 1)
    path = stock_path_from_signs(hand_market, d, [1])
    assert path.value_at(0.0) == 100.0
    assert path.value_at(hand_market.T) == pytest.approx(200.0, rel=1e-14)


def test_two_step_discounted_mean(market):
    d = crr_step_params(market, 2)
    total = 0.0
    for s1 in (-1, 1):
        for s2 in (-1, 1):
            ups = (s1 > 0) + (s2 > 0)
            w = d.p_up**ups * (1 - d.p_up) ** (2 - ups)
            total += w * math.exp(-market.r * market.T) * stock_path_from_signs(market, d, [s1, s2]).value_at(market.T)
    assert total == pytest.approx(market.z, rel=1e-12)


def test_path_floor_convention(market):
    d = crr_step_params(market, 4)
    path = stock_path_from_signs(market, d, [1, -1, 1])
    assert path.value_at(0.2) == market.z
    assert path.value_at(0.25) == pytest.approx(market.z * d.up)
    assert path.value_at(0.49) == pytest.approx(market.z * d.up)
    assert path.value_at(0.5) == pytest.approx(market.z * d.up * d.down)


@given(st.lists(st.sampled_from([-1, 1]), max_size=12))
def test_stock_path_is_pure(signs):
    p = MarketParams(100, 0.03, 0.25, 1.0)
    d = crr_step_params(p, 12)
    a, b = stock_path_from_signs(p, d, signs), stock_path_from_signs(p, d, signs)
    assert a.breakpoints.tobytes() == b.breakpoints.tobytes()
    assert a.values.tobytes() == b.values.tobytes()


def test_stock_path_rejects_bad_signs(market):
    d = crr_step_params(market, 2)
    with pytest.raises(ValueError):
        stock_path_from_signs(market, d, [1, 1, 1])
    with pytest.raises(ValueError):
        stock_path_from_signs(market, d, [0])


def test_piecewise_path_validation():
    with pytest.raises(ValueError):
        PiecewiseConstantPath(np.array([0.1, 0.2]), np.array([1.0, 2.0]), 1.0)
    with pytest.raises(ValueError):
        PiecewiseConstantPath(np.array([0.0, 0.0]), np.array([1.0, 2.0]), 1.0)
    with pytest.raises(ValueError):
        PiecewiseConstantPath(np.array([0.0, 2.0]), np.array([1.0, 2.0]), 1.0)
    path = PiecewiseConstantPath(np.array([0.0, 0.5]), np.array([1.0, 3.0]), 1.0)
    assert path.value_at(0.5) == 3.0
    assert path.sup_between(0.0, 0.4) == 1.0
    np.testing.assert_allclose(path.durations_upto(0.8), [0.5, 0.3])
    with pytest.raises(ValueError):
        path.value_at(1.5)


@settings(max_examples=25)
@given(params_st, st.integers(1, 200))
def test_discount_factor(p, n):
    d = crr_step_params(p, n)
    k = n // 2
    assert d.discount(k) == pytest.approx((1 + d.r_n) ** (-k), rel=1e-12)
