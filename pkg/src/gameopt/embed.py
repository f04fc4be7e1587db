"""Skorokhod embedding of the CRR walk into simulated Black-Scholes paths.

With ``B*_t = -(kappa/2) t + B_t`` the discounted price is ``z exp(kappa B*_t)``.
The embedding times are the successive first exits of ``B*`` from the band
``(B*_{theta_k} - a, B*_{theta_k} + a)`` with ``a = sqrt(T/n)``; the exit side is
the sign of the walk step, and it occurs with the martingale-scheme up
probability.  Exercise rules and hedges built on the lattice are run along
these signs.

Discretization.  ``B*`` is sampled on a grid of step ``T/(n m)``.  Between grid
points a crossing is also declared with the Brownian-bridge crossing
probability ``exp(-2 (U - x0)(U - x1) / dt)``; a uniform is drawn for every
path and step where that probability exceeds ``exp(-40)``.
Hit times are interpolated linearly when a grid point lands beyond a level and
set to the step midpoint when the bridge test fires.  After a hit the band is
re-centred at the exact level, and the price at the hit time is the exact
level price.

Paths are simulated in fixed-size blocks; block ``b`` draws from
``Philox(SeedSequence([seed, b]))``, and per-path results are concatenated in
block order, so results do not depend on the number of worker threads.

Time clamping: the lattice step ``k`` maps to ``theta_k ^ T``.  The lattice game
ends at ``e = theta_n ^ T``; a rule that has not stopped earlier stops at ``e``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .dynkin import GameSolution
from .hedge import HedgeStrategy, tolerance_scale
from .market import MarketParams, PiecewiseConstantPath, Scheme
from .payoff import PayoffFunctional


@dataclass(frozen=True)
class SimConfig:
    paths: int = 100_000
    oversample: int = 64
    seed: int = 0
    horizon_slack: float | None = None  # T_max; None means 2T
    block_size: int = 10_000
    workers: int = 1

    def __post_init__(self) -> None:
        if self.paths < 1:
            raise ValueError("need at least one path")
        if self.oversample < 8:
            raise ValueError("oversample m must be at least 8")
        if self.block_size < 1 or self.workers < 1:
            raise ValueError("block_size and workers must be positive")

    def t_max(self, T: float) -> float:
        tm = 2.0 * T if self.horizon_slack is None else float(self.horizon_slack)
        if tm < T:
            raise ValueError("horizon_slack must be at least T")
        return tm

    def blocks(self) -> list[tuple[int, int]]:
        out, done, b = [], 0, 0
        while done < self.paths:
            size = min(self.block_size, self.paths - done)
            out.append((b, size))
            done += size
            b += 1
        return out


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def _run_blocks(cfg: SimConfig, fn: Callable[[int, int], dict]) -> dict:
    blocks = cfg.blocks()
    if cfg.workers == 1 or len(blocks) == 1:
        parts = [fn(b, size) for b, size in blocks]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            parts = list(ex.map(lambda bs: fn(*bs), blocks))
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


# ---------------------------------------------------------------- walker


_BRIDGE_CUT = 20.0


class _Walker:
    """Fine-grid simulation of ``B*`` with band-exit detection, vectorized over a block."""

    def __init__(self, params: MarketParams, n: int, m: int, rng: np.random.Generator, size: int):
        self.a = math.sqrt(params.T / n)
        self.dt = params.T / (n * m)
        self.drift = -0.5 * params.kappa * self.dt
        self.sd = math.sqrt(self.dt)
        self.rng = rng
        self.size = size
        self.x = np.zeros(size)
        self.j = np.zeros(size, dtype=np.int64)  # band centre = j * a
        self.steps = 0

    @property
    def t(self) -> float:
        return self.steps * self.dt

    def step(self, active: np.ndarray | None = None) -> list[tuple[np.ndarray, ...]]:
        """Advance one grid step; return hit rounds ``(paths, times, signs, new band centres)`` in time order."""
        g = self.rng.standard_normal(self.size)
        x0, a, dt = self.x, self.a, self.dt
        x1 = x0 + self.drift + self.sd * g
        t0 = self.t
        t1 = (self.steps + 1) * dt
        U = (self.j + 1) * a
        L = U - 2 * a
        over, under = x1 >= U, x1 <= L
        eu = (U - x0) * (U - x1)
        ed = (x0 - L) * (x1 - L)
        # bridge test only where the crossing probability exceeds exp(-40)
        cand = np.flatnonzero(~(over | under) & (np.minimum(eu, ed) < _BRIDGE_CUT * dt))
        u = self.rng.random(cand.size)
        pu = np.exp(-2.0 * eu[cand] / dt)
        pd = np.exp(-2.0 * ed[cand] / dt)
        b_up = np.zeros(self.size, bool)
        b_dn = np.zeros(self.size, bool)
        b_up[cand] = u < pu
        b_dn[cand] = (u >= pu) & (u < pu + pd)
        inside = ~(over | under)
        hit = ~inside | b_up | b_dn
        if active is not None:
            hit &= active
        rounds = []
        idx = np.flatnonzero(hit)
        if idx.size:
            up = (over | b_up)[idx]
            lev = np.where(up, U[idx], L[idx])
            cross = ~inside[idx]
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(cross, (lev - x0[idx]) / (x1[idx] - x0[idx]), 0.5)
            tau = t0 + dt * np.clip(frac, 0.0, 1.0)
            sgn = np.where(up, 1, -1)
            self.j[idx] += sgn
            rounds.append((idx, tau, sgn, self.j[idx].copy()))
            # the grid endpoint may already lie outside the re-centred band
            while True:
                jj = self.j[idx]
                xe = x1[idx]
                up2 = xe >= (jj + 1) * a
                dn2 = xe <= (jj - 1) * a
                more = up2 | dn2
                if not more.any():
                    break
                idx, tau, up2 = idx[more], tau[more], up2[more]
                ell = jj[more] * a
                lev = np.where(up2, ell + a, ell - a)
                tau = tau + (t1 - tau) * np.clip((lev - ell) / (x1[idx] - ell), 0.0, 1.0)
                sgn = np.where(up2, 1, -1)
                self.j[idx] += sgn
                rounds.append((idx, tau, sgn, self.j[idx].copy()))
        self.x = x1
        self.steps += 1
        return rounds


# ---------------------------------------------------------------- diagnostics


@dataclass
class EmbeddedPath:
    path_id: int
    fine_path: PiecewiseConstantPath | None
    theta: np.ndarray  # theta_0 = 0, theta_1, ... up to the hits realized
    signs: np.ndarray
    exhausted: bool


def _embed_block(params: MarketParams, n: int, cfg: SimConfig, block: int, size: int,
                 record: bool = False) -> dict:
    rng = block_rng(cfg.seed, block)
    w = _Walker(params, n, cfg.oversample, rng, size)
    t_max = cfg.t_max(params.T)
    max_steps = int(round(t_max / w.dt))
    theta = np.full((size, n), np.nan)
    signs = np.zeros((size, n), dtype=np.int8)
    hits = np.zeros(size, dtype=np.int64)
    xs = [w.x.copy()] if record else None
    hit_log = [] if record else None
    while w.steps < max_steps:
        active = hits < n
        if not active.any():
            break
        for idx, tau, sgn, jn in w.step(active):
            keep = hits[idx] < n
            idx, tau, sgn, jn = idx[keep], tau[keep], sgn[keep], jn[keep]
            theta[idx, hits[idx]] = tau
            signs[idx, hits[idx]] = sgn
            if record:
                hit_log.append((idx, tau, jn))
            hits[idx] += 1
        if record:
            xs.append(w.x.copy())
    out = {"theta": theta, "signs": signs, "hits": hits}
    if record:
        out["fine"] = _fine_paths(params, w, np.array(xs), hit_log)
    return out


def _fine_paths(params, w: _Walker, xs: np.ndarray, hit_log) -> np.ndarray:
    grid_t = np.arange(xs.shape[0]) * w.dt
    paths = np.empty(xs.shape[1], dtype=object)
    per_path: dict[int, list] = {}
    for idx, tau, jj in hit_log:
        for p, t, j in zip(idx, tau, jj):
            per_path.setdefault(int(p), []).append((float(t), float(j * w.a)))
    for p in range(xs.shape[1]):
        times = list(grid_t)
        logs = list(xs[:, p])
        for t, lv in per_path.get(p, []):
            times.append(t)
            logs.append(lv)
        order = np.argsort(np.array(times), kind="stable")
        tt = np.array(times)[order]
        ll = np.array(logs)[order]
        keep = np.concatenate(([True], np.diff(tt) > 0))
        tt, ll = tt[keep], ll[keep]
        vals = params.z * np.exp(params.r * tt + params.kappa * ll)
        paths[p] = PiecewiseConstantPath(tt, vals, float(grid_t[-1]))
    return paths


def simulate_embedding(params: MarketParams, n: int, cfg: SimConfig,
                       record_paths: bool = True) -> Iterator[EmbeddedPath]:
    """Stream of embedded paths in path-id order; exhausted paths carry ``exhausted=True``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    pid = 0
    for block, size in cfg.blocks():
        res = _embed_block(params, n, cfg, block, size, record=record_paths)
        for i in range(size):
            h = int(res["hits"][i])
            theta = np.concatenate(([0.0], res["theta"][i, :h]))
            fine = res["fine"][i] if record_paths else None
            yield EmbeddedPath(pid, fine, theta, res["signs"][i, :h].astype(int), h < n)
            pid += 1


def embedding_alpha(params: MarketParams, n: int) -> float:
    """``E theta_1 / (T/n)`` for exits of ``B*`` from ``(-a, a)``: ``2 tanh(kappa a/2) / (kappa a)``."""
    x = params.kappa * math.sqrt(params.T / n)
    return 2.0 * math.tanh(0.5 * x) / x


@dataclass
class EmbeddingDiagnostics:
    n: int
    paths: int
    exhausted: int
    p_theory: float
    sign_frequency: float
    sign_std_error: float
    sign_z: float
    chi2_stat: float
    chi2_pvalue: float
    chi2_cells: int
    mean_theta1: float
    theta1_std_error: float
    theta1_expected: float
    theta1_rel_error: float
    theta1_rel_error_vs_grid: float
    strictly_increasing: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def embedding_diagnostics(params: MarketParams, n: int, cfg: SimConfig, chi2_len: int = 3) -> EmbeddingDiagnostics:
    """Sign law, joint sign-pattern chi-square, and mean first embedding time."""
    from scipy import stats

    res = _run_blocks(cfg, lambda b, s: _embed_block(params, n, cfg, b, s))
    ok = res["hits"] >= n
    signs = res["signs"][ok].astype(int)
    theta = res["theta"][ok]
    M = int(ok.sum())
    p = 1.0 / (math.exp(params.kappa * math.sqrt(params.T / n)) + 1.0)
    N = signs.size
    freq = float(np.mean(signs > 0))
    se = math.sqrt(p * (1 - p) / N)
    L = min(chi2_len, n)
    codes = ((signs[:, :L] > 0).astype(np.int64) * (1 << np.arange(L - 1, -1, -1))).sum(axis=1)
    counts = np.bincount(codes, minlength=2**L)
    ups = np.array([bin(c).count("1") for c in range(2**L)])
    expected = M * p**ups * (1 - p) ** (L - ups)
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    pval = float(stats.chi2.sf(chi2, 2**L - 1))
    th1 = theta[:, 0]
    dt = params.T / n
    exp1 = embedding_alpha(params, n) * dt
    mean1 = float(np.mean(th1))
    incr = bool(np.all(np.diff(np.concatenate([np.zeros((M, 1)), theta], axis=1), axis=1) > 0))
    return EmbeddingDiagnostics(
        n=n, paths=M, exhausted=int((~ok).sum()), p_theory=p, sign_frequency=freq, sign_std_error=se,
        sign_z=(freq - p) / se, chi2_stat=chi2, chi2_pvalue=pval, chi2_cells=2**L,
        mean_theta1=mean1, theta1_std_error=float(np.std(th1, ddof=1) / math.sqrt(M)) if M > 1 else 0.0,
        theta1_expected=exp1, theta1_rel_error=mean1 / exp1 - 1.0, theta1_rel_error_vs_grid=mean1 / dt - 1.0,
        strictly_increasing=incr,
    )


# ---------------------------------------------------------------- game on embedded paths


@dataclass
class SimReport:
    estimate: float
    std_error: float
    paths: int
    diagnostics: dict = field(default_factory=dict)
    per_path: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "std_error": self.std_error, "paths": self.paths,
                "diagnostics": self.diagnostics}


def _game_block(solution: GameSolution, params: MarketParams, payoff: PayoffFunctional, cfg: SimConfig,
                block: int, size: int, strategy: HedgeStrategy | None) -> dict:
    lat = solution.lattice
    n = lat.n
    T, r, z, kap = params.T, params.r, params.z, params.kappa
    w = _Walker(params, n, cfg.oversample, block_rng(cfg.seed, block), size)
    steps = n * cfg.oversample
    zeta, eta = solution.writer_rule, solution.holder_rule

    state = payoff.init_state(z, size=size)
    F0, D0 = payoff.values(state)
    node = np.zeros(size, dtype=np.int64)
    hits = np.zeros(size, dtype=np.int64)
    theta_n = np.full(size, np.nan)
    w_done = np.zeros(size, bool)
    h_done = np.zeros(size, bool)
    s_time = np.full(size, T)
    Gs = np.zeros(size)
    F_at_t = np.zeros(size)
    t_time = np.full(size, T)

    off = lat.offsets
    wflat = lat.flatten(zeta.stop)
    hflat = lat.flatten(eta.stop)

    def stop_check(ks, idx, tau, F, G):
        pos = off[ks] + node[idx]
        ws = ~w_done[idx] & (wflat[pos] | (ks == n))
        hs = ~h_done[idx] & (hflat[pos] | (ks == n))
        wi, hi = idx[ws], idx[hs]
        s_time[wi], Gs[wi] = tau[ws], G[ws]
        w_done[wi] = True
        t_time[hi], F_at_t[hi] = tau[hs], F[hs]
        h_done[hi] = True
        return ws

    all_idx = np.arange(size)
    zeros = np.zeros(size)
    stop_check(np.zeros(size, dtype=np.int64), all_idx, zeros, F0, F0 + D0)

    hedge = strategy is not None
    if hedge:
        Zd = np.full(size, strategy.initial_capital)
        S_anchor = np.full(size, float(z))  # discounted price at the last embedding time
        gflat = lat.flatten(strategy.gamma)
        goff = off[:-1]
        gam = np.where(w_done, 0.0, strategy.gamma[0][0])
        live = ~w_done.copy()  # still inside [0, s ^ e]
        short = np.maximum(F0 - Zd, 0.0)
        cancel0 = w_done & (0 < n)
        short = np.where(cancel0, np.maximum(short, F0 + D0 - Zd), short)

    for _ in range(steps):
        if w_done.all() and h_done.all() and (not hedge or not live.any()):
            break
        pre = state
        t0, t1 = w.t, (w.steps + 1) * w.dt
        rounds = w.step(hits < n)
        Sd = z * np.exp(kap * w.x)
        S1 = Sd * math.exp(r * t1)
        state = payoff.advance(pre, w.dt, S1)
        state.t = np.full(size, t1)
        if rounds:
            hp = rounds[0][0]
            sub = pre.take(hp)
            tcur = np.full(hp.size, t0)
            for idx, tau, sgn, jn in rounds:
                pos = np.searchsorted(hp, idx)
                k_now = hits[idx]
                keep = k_now < n
                idx, tau, sgn, jn, pos, k_now = idx[keep], tau[keep], sgn[keep], jn[keep], pos[keep], k_now[keep]
                if idx.size == 0:
                    continue
                lev_disc = z * np.exp(kap * w.a * jn)
                lev = lev_disc * np.exp(r * tau)
                part = sub.take(pos)
                part = payoff.advance(part, tau - tcur[pos], lev)
                part.t = tau.copy()
                sub.put(pos, part)
                tcur[pos] = tau
                node[idx] = lat.child_at(k_now, node[idx], sgn > 0)
                hits[idx] += 1
                k1 = k_now + 1
                F, D = payoff.values(part)
                ws = stop_check(k1, idx, tau, F, F + D)
                if hedge:
                    act = live[idx]
                    Zd[idx] = np.where(act, Zd[idx] + gam[idx] * (lev_disc - S_anchor[idx]), Zd[idx])
                    S_anchor[idx] = np.where(act, lev_disc, S_anchor[idx])
                    Zu = Zd[idx] * np.exp(r * tau)
                    cand = np.maximum(F - Zu, 0.0)
                    cand = np.where(ws & (k1 < n), np.maximum(cand, F + D - Zu), cand)
                    short[idx] = np.where(act, np.maximum(short[idx], cand), short[idx])
                    live[idx[act & (ws | (k1 == n))]] = False
                    gpos = goff[np.minimum(k1, n - 1)] + node[idx]
                    gam[idx] = np.where(live[idx] & (k1 < n), gflat[np.minimum(gpos, gflat.size - 1)], 0.0)
                theta_n[idx[k1 == n]] = tau[k1 == n]
            sub = payoff.advance(sub, t1 - tcur, S1[hp])
            sub.t = np.full(hp.size, t1)
            state.put(hp, sub)
        if hedge and live.any():
            F, D = payoff.values(state)
            Zu = (Zd + gam * (Sd - S_anchor)) * math.exp(r * t1)
            short = np.where(live, np.maximum(short, F - Zu), short)

    # rules not stopped by T stop at T
    F_T, D_T = payoff.values(state)
    rest_w = ~w_done
    s_time[rest_w], Gs[rest_w] = T, F_T[rest_w] + D_T[rest_w]
    rest_h = ~h_done
    t_time[rest_h], F_at_t[rest_h] = T, F_T[rest_h]
    writer_first = s_time < t_time
    pay = np.where(writer_first, Gs, F_at_t)
    Q = np.exp(-r * np.minimum(s_time, t_time)) * pay
    out = {"Q": Q, "theta_n": theta_n, "hits": hits, "s": s_time, "t": t_time}
    if hedge:
        out["shortfall"] = short
    return out


def _check_solution(solution: GameSolution, params: MarketParams, payoff: PayoffFunctional) -> None:
    if solution.params != params:
        raise ValueError("solution was computed for different market parameters")
    if solution.payoff.spec() != payoff.spec():
        raise ValueError("solution was computed for a different payoff")
    if solution.dist.scheme is not Scheme.MARTINGALE:
        raise ValueError("the embedding reproduces the martingale scheme only")


def evaluate_exercise_quality(solution: GameSolution, params: MarketParams, payoff: PayoffFunctional,
                              cfg: SimConfig) -> SimReport:
    """Mean of ``Q(phi*, psi*)`` on embedded paths, with its gap to the lattice price."""
    _check_solution(solution, params, payoff)
    res = _run_blocks(cfg, lambda b, s: _game_block(solution, params, payoff, cfg, b, s, None))
    Q = res["Q"]
    M = Q.size
    est = float(np.mean(Q))
    se = float(np.std(Q, ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    diag = {"n": solution.n, "price": solution.price, "gap": abs(est - solution.price),
            "mean_hits": float(np.mean(res["hits"])), "frac_theta_n_before_T": float(np.mean(~np.isnan(res["theta_n"])))}
    return SimReport(est, se, M, diag, res)


def simulate_shortfall(strategy: HedgeStrategy, solution: GameSolution, params: MarketParams,
                       payoff: PayoffFunctional, cfg: SimConfig) -> SimReport:
    """Mean maximal shortfall ``sup_t (R(phi, t) - Z_{phi ^ t})^+`` of the transferred hedge."""
    _check_solution(solution, params, payoff)
    if strategy.lattice is not solution.lattice:
        raise ValueError("strategy was not built from this solution")
    res = _run_blocks(cfg, lambda b, s: _game_block(solution, params, payoff, cfg, b, s, strategy))
    sf = res["shortfall"]
    M = sf.size
    scale = tolerance_scale(params, payoff)
    est = float(np.mean(sf))
    se = float(np.std(sf, ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    diag = {"n": solution.n, "scale": scale, "normalized_estimate": est / scale,
            "normalized_std_error": se / scale, "max_shortfall": float(np.max(sf)),
            "mean_Q": float(np.mean(res["Q"]))}
    return SimReport(est, se, M, diag, res)


def write_traces(report: SimReport, path) -> None:
    """Per-path CSV: ``path_id, Q_value, shortfall_sup, theta_n, n_hits``."""
    pp = report.per_path
    Q = pp.get("Q")
    sf = pp.get("shortfall")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["path_id", "Q_value", "shortfall_sup", "theta_n", "n_hits"])
        for i in range(len(pp["hits"])):
            wr.writerow([i, repr(float(Q[i])) if Q is not None else "",
                         repr(float(sf[i])) if sf is not None else "",
                         "" if np.isnan(pp["theta_n"][i]) else repr(float(pp["theta_n"][i])),
                         int(pp["hits"][i])])
