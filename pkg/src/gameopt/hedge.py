"""Writer's hedge from the Doob decomposition of the discounted game value.

Work in discounted units (bond ``b_k = exp(r k T/n)`` becomes 1).  Before the
writer's rational stop ``zeta*`` the value process is a supermartingale, and
on a two-point lattice its martingale part is replicated by holding::

    gamma_{k+1} = (V_{k+1}^up - V_{k+1}^down) / (S~_{k+1}^up - S~_{k+1}^down)

shares over ``(k, k+1]``.  The portfolio ``Z~`` then dominates ``V`` with a
non-negative gap (the compensator).  At ``zeta*`` the position is liquidated
into bonds and frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynkin import GameSolution, StoppingRule
from .lattice import Engine, Lattice
from .market import MarketParams, Scheme, StepDistribution
from .payoff import PayoffFunctional


def tolerance_scale(params: MarketParams, payoff: PayoffFunctional) -> float:
    """``1 + F_0(z) + Delta_0(z) + z``."""
    st = payoff.init_state(params.z, size=1)
    F, D = payoff.values(st)
    return float(1.0 + F[0] + D[0] + params.z)


@dataclass
class HedgeStrategy:
    """Holdings ``(beta_{k+1}, gamma_{k+1})`` for the period after step ``k``, keyed by level-``k`` nodes.

    ``gamma[k]`` is in shares.  On tree lattices the tables are the actual
    holdings (frozen to all-bond after ``cancel_rule`` fires) and ``beta[k]`` is
    in bond units.  On memo lattices the bond holding depends on the whole path,
    so ``beta`` is None and ``gamma`` is the pre-cancellation holding; use
    :meth:`walk` to run the portfolio.
    """

    initial_capital: float
    gamma: list[np.ndarray]
    beta: list[np.ndarray] | None
    cancel_rule: StoppingRule
    lattice: Lattice

    @property
    def n(self) -> int:
        return self.lattice.n

    def walk(self, signs: np.ndarray) -> dict:
        """Run the portfolio along sign paths (rows of ``signs``, shape ``(paths, k)``).

        Returns discounted stock ``S~``, portfolio ``Z~`` and the holdings, each of
        shape ``(paths, k+1)`` (holdings column ``j`` is used over ``(j, j+1]``),
        plus the lattice nodes and the cancellation step (``n + 1`` if not yet).
        """
        signs = np.atleast_2d(np.asarray(signs))
        return _walk(self, signs)


# ---------------------------------------------------------------- construction


def _discounted_stock(lat: Lattice, k: int, idx) -> np.ndarray:
    """Discounted price at level-``k`` nodes in the node's own units (divide by the node scale for scaled lattices)."""
    return lat.dist.discount(k) * lat.levels[k].sigma[idx]


def build_hedge(solution: GameSolution, dist: StepDistribution | None = None,
                capital: float | None = None) -> HedgeStrategy:
    """Hedge pair ``(zeta*, pi)`` for the writer with ``initial_capital = price`` unless ``capital`` is given."""
    lat = solution.lattice
    dist = lat.dist if dist is None else dist
    if dist != lat.dist:
        raise ValueError("step distribution does not match the solution's lattice")
    if dist.scheme is not Scheme.MARTINGALE:
        raise ValueError("hedging needs the martingale scheme; the symmetric scheme is not risk neutral")
    if solution.k_start:
        raise ValueError("hedges are built from untruncated solutions only")
    n = lat.n
    V = solution.values
    gam: list[np.ndarray] = []
    for k in range(n):
        idx = np.arange(lat.levels[k].size)
        d, u = lat.children(k, idx)
        ru, rd = lat.ratio_up, lat.ratio_down
        disc = dist.discount(k + 1)
        ds = disc * (ru * lat.levels[k + 1].sigma[u] - rd * lat.levels[k + 1].sigma[d])
        if np.any(ds == 0):
            raise ValueError(f"degenerate lattice at step {k}: up and down prices coincide")
        gam.append((ru * V[k + 1][u] - rd * V[k + 1][d]) / ds)
    cap = solution.price if capital is None else float(capital)
    strat = HedgeStrategy(cap, gam, None, solution.writer_rule, lat)
    if lat.engine is Engine.TREE:
        strat.gamma, strat.beta = _tree_holdings(strat)
    return strat


def _tree_holdings(strat: HedgeStrategy):
    lat, n = strat.lattice, strat.n
    zeta = strat.cancel_rule
    Z = np.array([strat.initial_capital])
    stopped = np.zeros(1, bool)
    gam, bet = [], []
    for k in range(n):
        stopped = stopped | zeta.stop[k]
        g = np.where(stopped, 0.0, strat.gamma[k])
        Sk = _discounted_stock(lat, k, slice(None))
        b = Z - g * Sk
        gam.append(g)
        bet.append(b)
        Snext = _discounted_stock(lat, k + 1, slice(None)).reshape(-1, 2)
        Z = (b[:, None] + g[:, None] * Snext).reshape(-1)
        stopped = np.repeat(stopped, 2)
    return gam, bet


# ---------------------------------------------------------------- path walk


def _walk(strat: HedgeStrategy, signs: np.ndarray) -> dict:
    lat = strat.lattice
    P, K = signs.shape
    zeta = strat.cancel_rule
    idx = np.zeros(P, dtype=np.int64)
    scale = np.full(P, lat.scale0)
    Z = np.full(P, strat.initial_capital)
    zstep = np.full(P, lat.n + 1, dtype=np.int64)
    S = np.empty((P, K + 1))
    Zs = np.empty((P, K + 1))
    G = np.zeros((P, K + 1))
    B = np.zeros((P, K + 1))
    nodes = np.empty((P, K + 1), dtype=np.int64)
    for k in range(K + 1):
        Sk = _discounted_stock(lat, k, idx) * scale
        S[:, k], Zs[:, k], nodes[:, k] = Sk, Z, idx
        newly = (zstep > lat.n) & zeta.stop[k][idx]
        zstep[newly] = k
        if k == K or k == lat.n:
            break
        live = zstep > k
        g = np.where(live, strat.gamma[k][idx], 0.0)
        if strat.beta is not None:
            b = strat.beta[k][idx]
        else:
            b = Z - g * Sk
        G[:, k], B[:, k] = g, b
        up = signs[:, k] > 0
        nxt = lat.child(k, idx, up)
        if lat.scaled:
            scale = scale * np.where(up, lat.ratio_up, lat.ratio_down)
        idx = nxt
        S_next = _discounted_stock(lat, k + 1, idx) * scale
        Z = b + g * S_next
    return {"S": S, "Z": Zs, "gamma": G, "beta": B, "nodes": nodes, "zeta": zstep}


# ---------------------------------------------------------------- verification


@dataclass
class HedgeReport:
    max_domination_violation: float  # max over checks of (R - Z)^+, undiscounted
    min_margin: float  # min over checks of Z - R
    worst_node: tuple | None  # (step k, sign-path code, zeta on that path)
    max_selffinancing_residual: float
    min_compensator_increment: float
    scale: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "max_domination_violation": self.max_domination_violation,
            "min_margin": self.min_margin,
            "worst_node": list(self.worst_node) if self.worst_node else None,
            "max_selffinancing_residual": self.max_selffinancing_residual,
            "min_compensator_increment": self.min_compensator_increment,
            "scale": self.scale,
            "pass": self.passed,
        }


VERIFY_CAP = 20


def verify_hedge(strategy: HedgeStrategy, params: MarketParams, dist: StepDistribution,
                 payoff: PayoffFunctional, values: list[np.ndarray] | None = None) -> HedgeReport:
    """Exhaustive check of ``Z_{zeta ^ k} >= R(zeta T/n, k T/n)`` on every sign path and every ``k``.

    Payoffs are recomputed from a fresh full tree (not taken from the strategy's
    lattice).  ``values`` (the game values on the strategy's lattice) enables the
    compensator check ``Z~_k - V_k`` non-decreasing up to ``zeta``.
    """
    from .lattice import build_tree  # local: the checker always uses the plain tree

    n = dist.n
    if n > VERIFY_CAP:
        raise ValueError(f"exhaustive verification is capped at n = {VERIFY_CAP}")
    if strategy.n != n:
        raise ValueError("strategy and lattice have different step counts")
    tree = build_tree(params, dist, payoff, cap=VERIFY_CAP)
    lat = strategy.lattice
    scale = tolerance_scale(params, payoff)
    codes = np.arange(2**n)
    bits = (codes[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    signs = 2 * bits - 1
    w = strategy.walk(signs)
    zstep = w["zeta"]

    margin = np.full(codes.size, np.inf)
    where_k = np.zeros(codes.size, dtype=np.int64)
    comp_inc = np.inf
    sf = 0.0
    for k in range(n + 1):
        tnode = codes >> (n - k)
        disc = dist.discount(k)
        Y = tree.levels[k].Y[tnode] / disc
        X = tree.levels[k].X[tnode] / disc
        Zk = w["Z"][:, k] / disc
        live = zstep >= k  # Z_{zeta ^ k} = Z_k here
        m = np.where(live, Zk - Y, np.inf)
        cancel = zstep == k
        if k < n:
            m = np.minimum(m, np.where(cancel, Zk - X, np.inf))
        better = m < margin
        margin = np.where(better, m, margin)
        where_k = np.where(better, k, where_k)
        if k < n:
            b, g = w["beta"][:, k], w["gamma"][:, k]
            sf = max(sf, float(np.max(np.abs(b + g * w["S"][:, k] - w["Z"][:, k]))) if codes.size else 0.0)
        if values is not None and k < n:
            nodes = w["nodes"]
            sc = _scales(lat, signs, k)
            gap_k = w["Z"][:, k] - values[k][nodes[:, k]] * sc[0]
            gap_n = w["Z"][:, k + 1] - values[k + 1][nodes[:, k + 1]] * sc[1]
            act = zstep > k
            if np.any(act):
                comp_inc = min(comp_inc, float(np.min((gap_n - gap_k)[act])))
    worst = int(np.argmin(margin))
    min_margin = float(margin[worst])
    viol = max(0.0, -min_margin)
    passed = min_margin >= -1e-9 * scale and sf <= 1e-10 * scale
    return HedgeReport(viol, min_margin, (int(where_k[worst]), worst, int(zstep[worst])), sf,
                       float(comp_inc), scale, passed)


def _scales(lat: Lattice, signs: np.ndarray, k: int):
    if not lat.scaled:
        return 1.0, 1.0
    ups = np.sum(signs[:, :k] > 0, axis=1)
    logs = ups * lat.dist.log_up + (k - ups) * lat.dist.log_down
    s0 = lat.scale0 * np.exp(logs)
    s1 = s0 * np.where(signs[:, k] > 0, lat.ratio_up, lat.ratio_down)
    return s0, s1


def perturbed(strategy: HedgeStrategy, k: int, node: int, bump: float) -> HedgeStrategy:
    """Copy of ``strategy`` with ``gamma_{k+1}`` at one level-``k`` node shifted by ``bump`` shares.

    Bond holdings follow the self-financing identity, so the defect shows up as
    a domination violation rather than a bookkeeping residual.
    """
    gam = [g.copy() for g in strategy.gamma]
    gam[k][node] += bump
    return HedgeStrategy(strategy.initial_capital, gam, None, strategy.cancel_rule, strategy.lattice)
