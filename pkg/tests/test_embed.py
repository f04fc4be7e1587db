from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from gameopt.dynkin import solve
from gameopt.embed import (
    SimConfig,
    block_rng,
    embedding_alpha,
    embedding_diagnostics,
    evaluate_exercise_quality,
    simulate_embedding,
    simulate_shortfall,
    write_traces,
)
from gameopt.hedge import build_hedge
from gameopt.market import MarketParams, crr_step_params
from gameopt.payoff import make_payoff

MARKET = MarketParams(100.0, 0.05, 0.3, 1.0)
PUT = make_payoff("put", K=110, penalty="proportional", delta=0.1)


def small(**kw):
    base = dict(paths=2000, oversample=16, seed=11, block_size=500)
    return SimConfig(**{**base, **kw})


@pytest.mark.parametrize("bad", [dict(paths=0), dict(oversample=4), dict(block_size=0), dict(workers=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SimConfig(**bad)


def test_horizon_and_blocks():
    cfg = SimConfig(paths=25, block_size=10)
    assert cfg.blocks() == [(0, 10), (1, 10), (2, 5)]
    assert cfg.t_max(1.5) == 3.0
    with pytest.raises(ValueError):
        SimConfig(horizon_slack=0.5).t_max(1.0)


def test_block_streams_independent_of_order():
    a = block_rng(5, 3).random(4)
    block_rng(5, 0).random(100)
    assert np.array_equal(a, block_rng(5, 3).random(4))
    assert not np.array_equal(a, block_rng(5, 2).random(4))


def test_embedding_paths():
    n = 8
    paths = list(simulate_embedding(MARKET, n, small(paths=50, block_size=20)))
    assert [p.path_id for p in paths] == list(range(50))
    a = math.sqrt(MARKET.T / n)
    for p in paths:
        assert np.all(np.diff(p.theta) > 0)
        assert set(np.unique(p.signs)) <= {-1, 1}
        assert p.exhausted == (p.signs.size < n)
        j = np.concatenate(([0], np.cumsum(p.signs)))
        for th, jj in zip(p.theta[1:], j[1:]):
            expect = MARKET.z * math.exp(MARKET.r * th + MARKET.kappa * a * jj)
            assert p.fine_path.value_at(th) == pytest.approx(expect, rel=1e-12)


def test_alpha_formula():
    assert embedding_alpha(MARKET, 64) == pytest.approx(1.0, abs=1e-3)
    assert embedding_alpha(MARKET, 1) < 1.0


def test_diagnostics_small_sample():
    d = embedding_diagnostics(MARKET, 16, small())
    assert d.strictly_increasing
    assert abs(d.sign_z) < 4.5
    assert d.chi2_cells == 8 and 0.0 <= d.chi2_pvalue <= 1.0
    assert abs(d.theta1_rel_error) < 0.1
    assert d.exhausted == 0


@pytest.mark.parametrize("workers", [2, 4])
def test_workers_bit_identical(workers):
    sol = solve(MARKET, crr_step_params(MARKET, 8), PUT)
    strat = build_hedge(sol)
    a = simulate_shortfall(strat, sol, MARKET, PUT, small())
    b = simulate_shortfall(strat, sol, MARKET, PUT, small(workers=workers))
    for key in a.per_path:
        assert a.per_path[key].tobytes() == b.per_path[key].tobytes()
    d1 = embedding_diagnostics(MARKET, 8, small())
    d2 = embedding_diagnostics(MARKET, 8, small(workers=workers))
    assert d1 == d2


def test_zero_penalty_quality_exact():
    pay = make_payoff("put", K=110)
    sol = solve(MARKET, crr_step_params(MARKET, 8), pay)
    rep = evaluate_exercise_quality(sol, MARKET, pay, small(paths=300))
    assert rep.estimate == pytest.approx(10.0, abs=1e-12)
    assert rep.std_error == 0.0


def test_zero_penalty_shortfall_zero():
    pay = make_payoff("put", K=110)
    sol = solve(MARKET, crr_step_params(MARKET, 8), pay)
    rep = simulate_shortfall(build_hedge(sol), sol, MARKET, pay, small(paths=300))
    assert rep.estimate <= 1e-12 * rep.diagnostics["scale"]


def test_one_step_replication_has_no_shortfall(hand_market):
    pay = make_payoff("put", K=100, penalty="constant", delta=50)
    sol = solve(hand_market, crr_step_params(hand_market, 1), pay)
    rep = simulate_shortfall(build_hedge(sol), sol, hand_market, pay, small(paths=1000))
    assert rep.diagnostics["max_shortfall"] <= 1e-12 * rep.diagnostics["scale"]


def test_quality_estimate_near_price():
    sol = solve(MARKET, crr_step_params(MARKET, 16), PUT)
    rep = evaluate_exercise_quality(sol, MARKET, PUT, small(paths=4000))
    assert rep.diagnostics["gap"] < 4 * rep.std_error + 0.5
    assert 0 < rep.diagnostics["frac_theta_n_before_T"] < 1


def test_traces_csv(tmp_path):
    sol = solve(MARKET, crr_step_params(MARKET, 4), PUT)
    rep = simulate_shortfall(build_hedge(sol), sol, MARKET, PUT, small(paths=40, block_size=40))
    out = tmp_path / "traces.csv"
    write_traces(rep, out)
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["path_id", "Q_value", "shortfall_sup", "theta_n", "n_hits"]
    assert len(rows) == 41
    assert all(float(r[2]) >= 0 for r in rows[1:])
    q = evaluate_exercise_quality(sol, MARKET, PUT, small(paths=10, block_size=10))
    write_traces(q, out)
    assert list(csv.reader(out.open()))[1][2] == ""


def test_rejections():
    sol = solve(MARKET, crr_step_params(MARKET, 4), PUT)
    with pytest.raises(ValueError, match="payoff"):
        evaluate_exercise_quality(sol, MARKET, make_payoff("put", K=100), small(paths=10))
    with pytest.raises(ValueError, match="market"):
        evaluate_exercise_quality(sol, MarketParams(100.0, 0.0, 0.3, 1.0), PUT, small(paths=10))
    sym = solve(MARKET, crr_step_params(MARKET, 4, "symmetric"), PUT)
    with pytest.raises(ValueError, match="martingale"):
        evaluate_exercise_quality(sym, MARKET, PUT, small(paths=10))
    other = solve(MARKET, crr_step_params(MARKET, 4), PUT)
    with pytest.raises(ValueError, match="strategy"):
        simulate_shortfall(build_hedge(other), sol, MARKET, PUT, small(paths=10))
    with pytest.raises(ValueError):
        next(simulate_embedding(MARKET, 0, small(paths=1)))
