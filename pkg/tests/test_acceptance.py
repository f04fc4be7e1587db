"""Acceptance suite: twelve numbered criteria, one pass/fail line each.

Every criterion is a function ``criterion_k(workers)`` returning
``(passed, summary, fingerprint)``.  Lattice criteria spread their sub-cases
over a thread pool with ``workers`` threads; Monte Carlo criteria pass
``workers`` to the block simulator.  Criterion 12 re-runs criteria 1-11 with
4 and 8 workers and compares fingerprints (hashes of every computed number)
with the single-worker run.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gameopt.cli import RunConfig, convergence_report
from gameopt.dynkin import (
    HOLDER_FIXED,
    WRITER_FIXED,
    brute_force_value,
    enumerate_rules,
    rule_count,
    solve,
    value_against_fixed,
)
from gameopt.embed import SimConfig, embedding_diagnostics, evaluate_exercise_quality, simulate_shortfall
from gameopt.hedge import build_hedge, perturbed, tolerance_scale, verify_hedge
from gameopt.market import MarketParams, crr_step_params
from gameopt.payoff import battery, make_payoff
from gameopt import walkgame as wg

pytestmark = pytest.mark.slow

MARKET = MarketParams(100.0, 0.05, 0.3, 1.0)
HAND = MarketParams(100.0, 0.0, math.log(2.0), 1.0)
RUSSIAN_MARKET = MarketParams(100.0, 0.0, 0.3, 1.0)
BATTERY = battery()
PATHS = 100_000
BUDGET = {1: 1, 2: 120, 3: 120, 4: 30, 5: 120, 6: 300, 7: 600, 8: 300, 9: 900, 10: 900, 11: 300}
NAMES = {
    1: "hand-case exactness", 2: "brute-force equivalence", 3: "saddle point", 4: "American limit",
    5: "hedge domination", 6: "engine equivalence", 7: "convergence envelope", 8: "embedding statistics",
    9: "exercise-rule transfer", 10: "shortfall decay", 11: "walk-game bound", 12: "determinism",
}


def digest(*items) -> bytes:
    h = hashlib.sha256()
    for it in items:
        if isinstance(it, np.ndarray):
            h.update(it.tobytes())
        else:
            h.update(repr(it).encode())
    return h.digest()


def pmap(fn, cases, workers):
    if workers == 1:
        return [fn(c) for c in cases]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, cases))


# ---------------------------------------------------------------- lattice criteria


def criterion_1(workers):
    d = crr_step_params(HAND, 1)

    def case(delta):
        pay = make_payoff("put", K=100, penalty="constant", delta=delta)
        sol = solve(HAND, d, pay)
        out = {"price": sol.price}
        if delta == 50:
            strat = build_hedge(sol)
            w = strat.walk(np.array([[-1], [1]]))
            out["gamma"] = float(strat.gamma[0][0])
            out["Z1"] = w["Z"][:, 1]
            out["report"] = verify_hedge(strat, HAND, d, pay, sol.values)
        return out

    a, b = pmap(case, [5.0, 50.0], workers)
    ok = abs(a["price"] - 5.0) <= 1e-12 and abs(b["price"] - 100 / 3) <= 1e-12
    ok &= abs(b["gamma"] + 1 / 3) <= 1e-12
    ok &= bool(np.all(np.abs(b["Z1"] - np.array([50.0, 0.0])) <= 1e-12))  # down: K - 50, up: 0
    ok &= b["report"].passed and b["report"].max_domination_violation <= 1e-12
    summary = (f"price(5)={a['price']:.15g} price(50)={b['price']:.15g} gamma_1={b['gamma']:.15g} "
               f"Z_1={b['Z1'].tolist()}")
    return ok, summary, digest(a["price"], b["price"], b["gamma"], b["Z1"])


def criterion_2(workers):
    counts = [rule_count(k) for k in range(5)]
    enum_ok = counts == [1, 2, 5, 26, 677] and all(enumerate_rules(k).shape[0] == counts[k] for k in range(5))

    def case(c):
        pay, n = c
        d = crr_step_params(MARKET, n)
        price = solve(MARKET, d, pay).price
        bf = brute_force_value(MARKET, d, pay)
        return price, bf.value, bf.maxmin, bf.rule_count

    cases = [(p, n) for p in BATTERY for n in (1, 2, 3, 4)]
    res = pmap(case, cases, workers)
    worst = max(max(abs(v - p), abs(m - p)) / max(1.0, abs(p)) for p, v, m, _ in res)
    ok = enum_ok and worst <= 1e-12 and all(rc == rule_count(n) for (_, n), (*_, rc) in zip(cases, res))
    ok &= len(BATTERY) >= 6
    summary = f"{len(BATTERY)} payoffs x n=1..4, worst relative gap {worst:.2e}, |J_0,k| = {counts}"
    return ok, summary, digest(res, counts)


def criterion_3(workers):
    def case(c):
        pay, n = c
        d = crr_step_params(MARKET, n)
        sol = solve(MARKET, d, pay)
        vz = value_against_fixed(MARKET, d, pay, sol.writer_rule, WRITER_FIXED)
        ve = value_against_fixed(MARKET, d, pay, sol.holder_rule, HOLDER_FIXED)
        return sol.price, vz, ve

    res = pmap(case, [(p, n) for p in BATTERY for n in range(1, 13)], workers)
    worst = max(max(abs(vz - p), abs(ve - p)) for p, vz, ve in res)
    return worst <= 1e-10, f"{len(res)} cases (n=1..12), worst |one-sided - price| {worst:.2e}", digest(res)


def american(params, dist, payout):
    """Recombining American backward induction on undiscounted prices."""
    n = dist.n
    j = np.arange(n + 1)
    V = payout(params.z * np.exp(j * dist.log_up + (n - j) * dist.log_down))
    disc = 1.0 / (1.0 + dist.r_n)
    for k in range(n - 1, -1, -1):
        j = np.arange(k + 1)
        S = params.z * np.exp(j * dist.log_up + (k - j) * dist.log_down)
        V = np.maximum(payout(S), disc * (dist.p_up * V[1:] + (1 - dist.p_up) * V[:-1]))
    return float(V[0])


def criterion_4(workers):
    ns = [1, 2, 3, 5, 8, 16, 32, 64, 128, 256, 512]

    def case(c):
        kind, n = c
        d = crr_step_params(MARKET, n)
        if kind == "put":
            K = 100.0
            pay = make_payoff("put", K=K, penalty="constant", delta=K + 1.0)
            ref = american(MARKET, d, lambda S: np.maximum(K - S, 0.0))
        else:
            K = 90.0
            smax = MARKET.z * math.exp(n * max(d.log_up, 0.0))
            pay = make_payoff("call", K=K, penalty="constant", delta=smax + 1.0)
            ref = american(MARKET, d, lambda S: np.maximum(S - K, 0.0))
        sol = solve(MARKET, d, pay, "memo")
        never = all(c == 0 for c in sol.writer_rule.stop_counts()[:n])
        return sol.price, ref, never

    res = pmap(case, [(k, n) for k in ("put", "call") for n in ns], workers)
    worst = max(abs(p - r) / max(1.0, abs(r)) for p, r, _ in res)
    ok = worst <= 1e-12 and all(nv for *_, nv in res)
    return ok, f"put+call n<=512, worst relative gap {worst:.2e}, writer never cancels: {ok}", digest(res)


def live_nodes(sol, k):
    alive = np.ones(1, bool)
    for j in range(k + 1):
        alive = alive & ~sol.writer_rule.stop[j] & ~sol.holder_rule.stop[j]
        if j < k:
            alive = np.repeat(alive, 2)
    return np.flatnonzero(alive)


def criterion_5(workers):
    def case(c):
        pay, n = c
        d = crr_step_params(MARKET, n)
        sol = solve(MARKET, d, pay)
        rep = verify_hedge(build_hedge(sol), MARKET, d, pay, sol.values)
        return rep.passed, rep.min_margin / rep.scale, rep.min_compensator_increment

    res = pmap(case, [(p, n) for p in BATTERY for n in range(1, 13)], workers)
    dom_ok = all(r[0] for r in res)
    worst = min(r[1] for r in res)

    # perturbation fixture: one seeded live node per payoff at n = 8, bumped by 0.05 shares
    rng = np.random.default_rng(20240)
    fixtures = []
    for i, pay in enumerate(BATTERY):
        sol = solve(MARKET, crr_step_params(MARKET, 8), pay)
        choices = [(k, int(v)) for k in range(8) for v in live_nodes(sol, k)]
        if choices:
            fixtures.append((i, *choices[int(rng.integers(len(choices)))]))

    def detect(f):
        i, k, node = f
        pay = BATTERY[i]
        d = crr_step_params(MARKET, 8)
        strat = build_hedge(solve(MARKET, d, pay))
        rep = verify_hedge(perturbed(strat, k, node, 0.05), MARKET, d, pay)
        return (not rep.passed) and (rep.worst_node[1] >> (8 - k)) == node, rep.min_margin

    det = pmap(detect, fixtures, workers)
    ok = dom_ok and len(fixtures) >= 6 and all(x for x, _ in det)
    summary = (f"{len(res)} exhaustive checks, worst margin/scale {worst:.2e}; "
               f"{sum(x for x, _ in det)}/{len(fixtures)} perturbations detected and localized")
    return ok, summary, digest(res, fixtures, det)


def _node_values_agree(params, d, pay):
    """Prices and every node value of the tree against the memoized lattice."""
    tree = solve(params, d, pay, "tree")
    memo = solve(params, d, pay, "memo")
    lat = memo.lattice
    idx, scale = np.zeros(1, dtype=np.int64), np.full(1, lat.scale0)
    worst = 0.0
    for k in range(d.n + 1):
        tv = tree.values[k]
        mv = memo.values[k][idx] * scale
        worst = max(worst, float(np.max(np.abs(tv - mv) / np.maximum(1.0, np.abs(tv)))))
        if k == d.n:
            break
        dn, up = lat.children(k, idx)
        idx = np.stack([dn, up], axis=1).reshape(-1)
        if lat.scaled:
            scale = np.stack([scale * lat.ratio_down, scale * lat.ratio_up], axis=1).reshape(-1)
    return tree.price, memo.price, worst


def criterion_6(workers):
    vanilla = [BATTERY[0], BATTERY[3]]
    russian = make_payoff("russian", m=110, penalty="proportional", delta=0.05)
    cases = [(MARKET, p, n, s) for p in vanilla for n in (1, 2, 5, 10, 15, 20) for s in ("martingale", "symmetric")]
    cases += [(RUSSIAN_MARKET, russian, n, s) for n in range(1, 15) for s in ("martingale", "symmetric")]
    res = pmap(lambda c: _node_values_agree(c[0], crr_step_params(c[0], c[2], c[3]), c[1]), cases, workers)
    worst_price = max(abs(a - b) / max(1.0, abs(a)) for a, b, _ in res)
    worst_node = max(w for *_, w in res)
    ok = worst_price <= 1e-12 and worst_node <= 1e-12
    summary = (f"vanilla n<=20 and Russian r=0 n<=14, both schemes: worst price gap {worst_price:.2e}, "
               f"worst node gap {worst_node:.2e}")
    return ok, summary, digest(res)


N_LIST = [16, 32, 64, 128, 256, 512, 1024]


def criterion_7(workers):
    put = RunConfig(MARKET, make_payoff("put", K=100, penalty="constant", delta=10.0), n_list=N_LIST)
    rus = RunConfig(RUSSIAN_MARKET, make_payoff("russian", m=110, penalty="proportional", delta=0.05), n_list=N_LIST)
    jobs = [(put, True), (rus, False)]
    reps = pmap(lambda j: convergence_report(j[0], N_LIST, 4096, compare_schemes=j[1]), jobs, workers)
    ok = True
    parts = []
    for name, rep in zip(("put", "russian"), reps):
        errs = [r["error"] for r in rep.rows]
        C = rep.envelope_C
        env_ok = math.isfinite(C) and all(r["error"] <= C * (r["error"] / r["envelope_ratio"]) * (1 + 1e-12)
                                          for r in rep.rows)
        dec = errs[-1] < errs[0]
        ok &= env_ok and dec
        parts.append(f"{name}: C={C:.3g} err16={errs[0]:.3g} err1024={errs[-1]:.3g} "
                     f"alpha={rep.fitted_alpha:.2f} monotone2x={rep.monotone_within_2x}")
    gaps = [r["scheme_gap"] for r in reps[0].rows]
    ok &= gaps[-1] < gaps[0]
    parts.append(f"put scheme gap {gaps[0]:.3g} -> {gaps[-1]:.3g}")
    fp = digest([[(r["n"], r["V"], r["V_hat"], r["error"]) for r in rep.rows] + [rep.reference] for rep in reps])
    return ok, "; ".join(parts), fp


# ---------------------------------------------------------------- Monte Carlo criteria


def criterion_8(workers):
    cfg = SimConfig(paths=PATHS, oversample=64, seed=808, workers=workers)
    d = embedding_diagnostics(MARKET, 64, cfg)
    ok = abs(d.sign_z) <= 3.0 and abs(d.theta1_rel_error_vs_grid) < 0.02 and d.strictly_increasing
    summary = (f"n=64 m=64 M={PATHS}: sign freq {d.sign_frequency:.5f} vs p={d.p_theory:.5f} (z={d.sign_z:+.2f}), "
               f"mean theta_1 / (T/n) - 1 = {d.theta1_rel_error_vs_grid:+.4f}, exhausted {d.exhausted}")
    return ok, summary, digest(tuple(d.to_dict().items()))


QUALITY_PUT = make_payoff("put", K=100, penalty="constant", delta=10.0)
SHORTFALL_PUT = make_payoff("put", K=110, penalty="proportional", delta=0.1)
_SIM_CACHE: dict = {}


def _seed(n):
    return 9000 + n  # distinct streams per n keep the two estimates independent


def quality_run(pay, n, workers):
    key = ("quality", pay.label, n, workers)
    if key not in _SIM_CACHE:
        sol = solve(MARKET, crr_step_params(MARKET, n), pay, "memo")
        rep = evaluate_exercise_quality(sol, MARKET, pay, SimConfig(PATHS, 64, _seed(n), workers=workers))
        Q = rep.per_path["Q"]
        _SIM_CACHE[key] = (sol.price, float(np.mean(Q)), float(np.std(Q, ddof=1) / math.sqrt(Q.size)), digest(Q))
    return _SIM_CACHE[key]


def shortfall_run(pay, n, workers):
    key = ("shortfall", pay.label, n, workers)
    if key not in _SIM_CACHE:
        sol = solve(MARKET, crr_step_params(MARKET, n), pay, "memo")
        rep = simulate_shortfall(build_hedge(sol), sol, MARKET, pay, SimConfig(PATHS, 64, _seed(n), workers=workers))
        Q = rep.per_path["Q"]
        _SIM_CACHE[key] = {
            "price": sol.price, "Q_mean": float(np.mean(Q)), "Q_se": float(np.std(Q, ddof=1) / math.sqrt(Q.size)),
            "sf": rep.diagnostics["normalized_estimate"], "sf_se": rep.diagnostics["normalized_std_error"],
            "fp": digest(Q, rep.per_path["shortfall"]),
        }
    return _SIM_CACHE[key]


def criterion_9(workers):
    rows = []
    for label, runs in (("put const 10", [quality_run(QUALITY_PUT, n, workers) for n in (16, 256)]),
                        ("put 110 prop 0.1", [shortfall_run(SHORTFALL_PUT, n, workers) for n in (16, 256)])):
        if isinstance(runs[0], dict):
            runs = [(r["price"], r["Q_mean"], r["Q_se"], r["fp"]) for r in runs]
        (p1, m1, s1, f1), (p2, m2, s2, f2) = runs
        g1, g2 = abs(m1 - p1), abs(m2 - p2)
        comb = math.hypot(s1, s2)
        rows.append((label, g1, g2, comb, g2 < g1 - 3 * comb, f1 + f2))
    ok = all(r[4] for r in rows)
    summary = "; ".join(f"{lab}: gap16={g1:.4f} gap256={g2:.4f} (3 se={3 * c:.4f})" for lab, g1, g2, c, _, _ in rows)
    return ok, summary, digest(*(r[5] for r in rows))


def criterion_10(workers):
    a, b = shortfall_run(SHORTFALL_PUT, 16, workers), shortfall_run(SHORTFALL_PUT, 256, workers)
    comb = math.hypot(a["sf_se"], b["sf_se"])
    dec = b["sf"] < a["sf"] - 3 * comb
    # one-step replication: the lattice hedge is exact at the embedding levels
    pay = make_payoff("put", K=100, penalty="constant", delta=50.0)
    sol = solve(HAND, crr_step_params(HAND, 1), pay)
    rep = simulate_shortfall(build_hedge(sol), sol, HAND, pay, SimConfig(10_000, 64, 1010, workers=workers))
    floor = 1e-12
    n1 = rep.diagnostics["max_shortfall"] / tolerance_scale(HAND, pay)
    ok = dec and n1 <= floor
    summary = (f"normalized shortfall n=16 {a['sf']:.3e} -> n=256 {b['sf']:.3e} (3 se={3 * comb:.1e}); "
               f"n=1 replication max normalized shortfall {n1:.1e} (floor {floor:g}); shortfall runs shared with criterion 9")
    return ok, summary, digest(a["fp"], b["fp"], rep.per_path["shortfall"])


def criterion_11(workers):
    est = wg.estimate_rho(wg.rademacher(), PATHS, seed=1111)
    z = (est.rho2_hat - 2 / 3) / est.rho2_std_error
    unit = {"Lf_sup": 1.0, "Lg_sup": 1.0, "ft_sup": 1.0, "gt_sup": 1.0}
    hand = wg.lr_bound(unit, math.sqrt(2 / 3), 1.0, 100)
    hand_ok = abs(hand - (0.8 * math.sqrt(2 / 3) + 0.02)) <= 1e-12
    rho = wg.rademacher().rho

    def case(c):
        name, n = c
        pair = wg.make_pair(name)
        v1 = wg.walk_game_value(pair, wg.rademacher(), n, 1.0)
        v4 = wg.walk_game_value(pair, wg.rademacher(), 4 * n, 1.0)
        return abs(v1 - v4), wg.lr_bound(pair, rho, 1.0, n) + wg.lr_bound(pair, rho, 1.0, 4 * n)

    res = pmap(case, [(name, n) for name in sorted(wg.PAIRS) for n in (16, 64, 256)], workers)
    bound_ok = all(d <= b for d, b in res)
    slack = min(b / d if d > 0 else math.inf for d, b in res)
    ok = abs(z) <= 3.0 and hand_ok and bound_ok
    summary = (f"rho^2 = {est.rho2_hat:.4f} +- {est.rho2_std_error:.4f} (z={z:+.2f}), hand bound {hand:.16f}, "
               f"|V_n - V_4n| <= bounds on {len(res)} cases (min bound/diff {slack:.1f})")
    return ok, summary, digest(tuple(est.to_dict().items()), hand, res)


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 12)}
_RUNS: dict = {}


def run_criterion(k, workers=1):
    key = (k, workers)
    if key not in _RUNS:
        t0 = time.perf_counter()
        ok, summary, fp = CRITERIA[k](workers)
        _RUNS[key] = (bool(ok), summary, fp, time.perf_counter() - t0)
    return _RUNS[key]


def record(k, ok, text):
    line = f"[criterion {k:2d}] {'PASS' if ok else 'FAIL'} {NAMES[k]}: {text}"
    ACCEPTANCE_LINES[k] = line
    print(line)


@pytest.mark.parametrize("k", list(range(1, 12)))
def test_criterion(k):
    ok, summary, _, elapsed = run_criterion(k)
    within = elapsed < BUDGET[k]
    record(k, ok and within, f"{summary} [{elapsed:.1f}s, budget {BUDGET[k]}s]")
    assert ok, summary
    assert within, f"runtime {elapsed:.1f}s exceeds {BUDGET[k]}s"


def test_criterion_12_determinism():
    mismatches = []
    for k in range(1, 12):
        base = run_criterion(k)[2]
        for w in (4, 8):
            if run_criterion(k, w)[2] != base:
                mismatches.append((k, w))
    ok = not mismatches
    record(12, ok, "criteria 1-11 bit-identical at 1, 4 and 8 workers" if ok else f"mismatches {mismatches}")
    assert ok
