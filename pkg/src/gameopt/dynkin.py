"""Backward induction for the discrete Dynkin game and its oracles.

Values are discounted to time 0.  At a node at step ``k`` with discounted
holder claim ``Y`` and writer payment ``X``::

    V_n = Y_n,   V_k = min(X_k, max(Y_k, E[V_{k+1} | F_k]))

The writer (minimizer) cancels at ``zeta``, the holder (maximizer) exercises at
``eta``; the holder's claim wins ties, ``R(s, t) = X_s 1{s < t} + Y_t 1{t <= s}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .lattice import Engine, Lattice, TREE_CAP, build_lattice
from .market import MarketParams, StepDistribution, stock_path_from_signs
from .payoff import PayoffFunctional

BRUTE_FORCE_CAP = 4


# ---------------------------------------------------------------- stopping rules


@dataclass
class StoppingRule:
    """Member of J_{0,n}: the first step at which the current node lies in a stop set.

    ``stop[k]`` is a boolean mask over the level-``k`` nodes of ``lattice`` (or
    over sign prefixes when ``lattice`` is None).  ``stop[n]`` is all True.
    """

    n: int
    stop: list[np.ndarray]
    lattice: Lattice | None = None

    def __post_init__(self) -> None:
        if len(self.stop) != self.n + 1:
            raise ValueError("need one stop mask per step 0..n")
        self.stop = [np.asarray(s, dtype=bool) for s in self.stop]
        self.stop[self.n] = np.ones_like(self.stop[self.n])

    @property
    def tree_keyed(self) -> bool:
        return self.lattice is None or self.lattice.engine is Engine.TREE

    def _child(self, k, idx, up):
        if self.lattice is None:
            return 2 * idx + up
        return self.lattice.child(k, idx, up)

    def __call__(self, signs: Sequence[int]) -> int:
        """``nu(signs)``; only the first ``nu`` signs are read."""
        idx = 0
        for k in range(self.n + 1):
            if self.stop[k][idx]:
                return k
            idx = int(self._child(k, idx, signs[k] > 0))
        return self.n  # pragma: no cover

    def table(self) -> np.ndarray:
        """``nu`` on every sign sequence, indexed by the binary code of the sequence (first sign high)."""
        if self.n > 22:
            raise ValueError("tabulation limited to n <= 22")
        out = np.full(1, -1, dtype=np.int64)
        idx = np.zeros(1, dtype=np.int64)
        for k in range(self.n + 1):
            hit = (out < 0) & self.stop[k][idx]
            out[hit] = k
            if k == self.n:
                break
            out = np.repeat(out, 2)
            d, u = (2 * idx, 2 * idx + 1) if self.lattice is None else self.lattice.children(k, idx)
            idx = np.stack([d, u], axis=1).reshape(-1)
        return out

    def stop_counts(self) -> list[int]:
        return [int(s.sum()) for s in self.stop]

    @classmethod
    def from_table(cls, nu: np.ndarray, n: int) -> StoppingRule:
        """Sign-prefix rule from a table of ``nu`` over all ``2**n`` sequences; rejects non-members of J_{0,n}."""
        nu = np.asarray(nu, dtype=np.int64).reshape(-1)
        if nu.size != 2**n:
            raise ValueError(f"table must have 2**{n} entries")
        if np.any(nu < 0) or np.any(nu > n):
            raise ValueError("stopping values must lie in 0..n")
        stop = []
        for k in range(n + 1):
            blocks = nu.reshape(2**k, -1)
            at_k = blocks == k
            some, every = at_k.any(axis=1), at_k.all(axis=1)
            if np.any(some & ~every):
                bad = int(np.flatnonzero(some & ~every)[0])
                raise ValueError(f"inconsistent rule: prefix {bad} of length {k} stops on some extensions only")
            stop.append(every)
        return cls(n, stop)

    @classmethod
    def from_function(cls, fn: Callable[[tuple], int], n: int) -> StoppingRule:
        seqs = _all_sign_sequences(n)
        return cls.from_table(np.array([fn(tuple(s)) for s in seqs]), n)

    @classmethod
    def constant(cls, k: int, n: int, lattice: Lattice | None = None) -> StoppingRule:
        sizes = [lv.size for lv in lattice.levels] if lattice is not None else [2**j for j in range(n + 1)]
        return cls(n, [np.full(sizes[j], j == k) for j in range(n + 1)], lattice)


def _all_sign_sequences(n: int) -> np.ndarray:
    codes = np.arange(2**n)
    bits = (codes[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    return 2 * bits - 1


# ---------------------------------------------------------------- solution


@dataclass
class GameSolution:
    lattice: Lattice
    values: list[np.ndarray]
    writer_rule: StoppingRule
    holder_rule: StoppingRule
    price: float
    k_start: int = 0

    @property
    def n(self) -> int:
        return self.lattice.n

    @property
    def params(self) -> MarketParams:
        return self.lattice.params

    @property
    def dist(self) -> StepDistribution:
        return self.lattice.dist

    @property
    def payoff(self) -> PayoffFunctional:
        return self.lattice.payoff

    @property
    def engine(self) -> Engine:
        return self.lattice.engine


def _backward(lattice: Lattice, k_start: int = 0) -> list[np.ndarray]:
    n = lattice.n
    values: list[np.ndarray] = [None] * (n + 1)
    values[n] = lattice.levels[n].Y.copy()
    for k in range(n - 1, -1, -1):
        lv = lattice.levels[k]
        cont = lattice.continuation(k, values[k + 1])
        if k >= k_start:
            values[k] = np.minimum(lv.X, np.maximum(lv.Y, cont))
        else:
            values[k] = cont
    return values


def _tol(a: np.ndarray) -> np.ndarray:
    return 1e-12 * (1.0 + np.abs(a))


def _rules_from_values(lattice: Lattice, values, k_start: int = 0):
    n = lattice.n
    wstop, hstop = [], []
    for k in range(n + 1):
        lv, v = lattice.levels[k], values[k]
        if k < k_start:
            wstop.append(np.zeros(lv.size, bool))
            hstop.append(np.zeros(lv.size, bool))
            continue
        wstop.append(v >= lv.X - _tol(lv.X))
        hstop.append(v <= lv.Y + _tol(lv.Y))
    return StoppingRule(n, wstop, lattice), StoppingRule(n, hstop, lattice)


def solve_lattice(lattice: Lattice, k_start: int = 0) -> GameSolution:
    values = _backward(lattice, k_start)
    zeta, eta = _rules_from_values(lattice, values, k_start)
    return GameSolution(lattice, values, zeta, eta, float(values[0][0] * lattice.scale0), k_start)


def solve(params: MarketParams, dist: StepDistribution, payoff: PayoffFunctional,
          engine: Engine | str = Engine.TREE, cap: int = TREE_CAP) -> GameSolution:
    """Game price ``V^(n)(z)`` with the node values and both rational exercise rules."""
    return solve_lattice(build_lattice(params, dist, payoff, engine, cap))


def extract_exercise_rules(solution: GameSolution) -> tuple[StoppingRule, StoppingRule]:
    """Earliest-hitting rules: the writer cancels once ``V >= X``; the holder exercises once ``V <= Y``."""
    return solution.writer_rule, solution.holder_rule


# ---------------------------------------------------------------- one-sided values

WRITER_FIXED = "writer_fixed"
HOLDER_FIXED = "holder_fixed"


def _lattice_for_rule(params, dist, payoff, fixed: StoppingRule) -> Lattice:
    if fixed.lattice is not None:
        lat = fixed.lattice
        if lat.payoff is payoff and lat.dist == dist and lat.params == params:
            return lat
        if lat.engine is Engine.MEMO:
            raise ValueError("a rule on memo states can only be evaluated on its own lattice")
    return build_lattice(params, dist, payoff, Engine.TREE)


def value_against_fixed(params: MarketParams, dist: StepDistribution, payoff: PayoffFunctional,
                        fixed: StoppingRule, side: str) -> float:
    """Best response value against a fixed opponent rule.

    ``holder_fixed``: the writer minimizes against the holder rule ``eta``.
    ``writer_fixed``: the holder maximizes against the writer rule ``zeta``.
    """
    if side not in (WRITER_FIXED, HOLDER_FIXED):
        raise ValueError(f"side must be {WRITER_FIXED!r} or {HOLDER_FIXED!r}")
    if fixed.n != dist.n:
        raise ValueError("rule and lattice have different step counts")
    lat = _lattice_for_rule(params, dist, payoff, fixed)
    if lat.engine is Engine.TREE and fixed.lattice is None:
        StoppingRule.from_table(fixed.table(), fixed.n)  # consistency audit
    n = lat.n
    v = lat.levels[n].Y.copy()
    for k in range(n - 1, -1, -1):
        lv = lat.levels[k]
        cont = lat.continuation(k, v)
        stop = fixed.stop[k]
        if side == HOLDER_FIXED:
            v = np.where(stop, lv.Y, np.minimum(lv.X, cont))
        else:
            v = np.where(stop, lv.X, np.maximum(lv.Y, cont))
    return float(v[0] * lat.scale0)


# ---------------------------------------------------------------- brute force


@lru_cache(maxsize=None)
def enumerate_rules(n: int) -> np.ndarray:
    """All of J_{0,n} as rows of ``nu`` over the ``2**n`` sign sequences (first sign high bit)."""
    if n == 0:
        return np.zeros((1, 1), dtype=np.int64)
    sub = enumerate_rules(n - 1)
    half = sub.shape[1]
    m = sub.shape[0]
    pairs = np.concatenate([np.repeat(sub, m, axis=0), np.tile(sub, (m, 1))], axis=1) + 1
    return np.concatenate([np.zeros((1, 2 * half), dtype=np.int64), pairs])


def rule_count(n: int) -> int:
    """``|J_{0,n}|`` by the recurrence ``f(k) = 1 + f(k-1)**2``."""
    f = 1
    for _ in range(n):
        f = 1 + f * f
    return f


@dataclass
class BruteForceResult:
    value: float
    maxmin: float
    argmin_rule: np.ndarray
    argmax_rule: np.ndarray
    rule_count: int
    expectations: np.ndarray = field(repr=False, default=None)


def discounted_payoff_table(params, dist, payoff, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``Q[path, s, t]`` (writer step s, holder step t) and path probabilities, from direct path evaluation."""
    seqs = _all_sign_sequences(n)
    Q = np.zeros((len(seqs), n + 1, n + 1))
    w = np.zeros(len(seqs))
    for p, signs in enumerate(seqs):
        path = stock_path_from_signs(params, dist, signs) if n else stock_path_from_signs(params, dist, [])
        ups = int(np.sum(signs > 0))
        w[p] = dist.p_up**ups * (1 - dist.p_up) ** (n - ups)
        FG = [payoff.evaluate(path, j * params.T / dist.n if n else 0.0) for j in range(n + 1)]
        for s in range(n + 1):
            for t in range(n + 1):
                if t <= s:
                    Q[p, s, t] = math.exp(-params.r * t * dist.dt) * FG[t][0]
                else:
                    Q[p, s, t] = math.exp(-params.r * s * dist.dt) * FG[s][2]
    return Q, w


def brute_force_value(params: MarketParams, dist: StepDistribution, payoff: PayoffFunctional,
                      n: int | None = None) -> BruteForceResult:
    """Min-max over all rule pairs of J_{0,n} with exact expectations over the 2**n sign paths.

    ``n`` defaults to ``dist.n``; ``n = 0`` is the game that ends at time 0.
    """
    n = dist.n if n is None else n
    if n > BRUTE_FORCE_CAP:
        raise ValueError(f"brute force is capped at n = {BRUTE_FORCE_CAP}")
    if n not in (0, dist.n):
        raise ValueError("n must equal dist.n (or 0)")
    rules = enumerate_rules(n)
    Q, w = discounted_payoff_table(params, dist, payoff, n)
    paths = np.arange(Q.shape[0])
    E = np.zeros((len(rules), len(rules)))
    for p in paths:
        E += w[p] * Q[p][rules[:, p][:, None], rules[:, p][None, :]]
    row_max = E.max(axis=1)
    col_min = E.min(axis=0)
    i, j = int(np.argmin(row_max)), int(np.argmax(col_min))
    res = BruteForceResult(float(row_max[i]), float(col_min[j]), rules[i], rules[j], len(rules), E)
    if abs(res.value - res.maxmin) > 1e-10 * (1 + abs(res.value)):
        raise AssertionError(f"min-max {res.value} differs from max-min {res.maxmin}")
    return res


# ---------------------------------------------------------------- truncation


def truncation_step(n: int, epsilon: float, T: float) -> int:
    return int(math.ceil(n * epsilon / T - 1e-12)) if epsilon > 0 else 0


def truncated_value(params: MarketParams, dist: StepDistribution, payoff: PayoffFunctional,
                    epsilon: float, engine: Engine | str = Engine.TREE) -> float:
    """Game value when neither player may stop before ``epsilon``.

    Stops requested before step ``ceil(n epsilon / T)`` are deferred to that step,
    and the payoffs are evaluated at the deferred time.
    """
    if not 0 <= epsilon <= params.T:
        raise ValueError(f"epsilon must lie in [0, T]; got {epsilon}")
    lat = build_lattice(params, dist, payoff, engine)
    k_eps = truncation_step(dist.n, epsilon, params.T)
    return solve_lattice(lat, k_eps).price
