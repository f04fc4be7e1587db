"""Node tables of the n-step lattice: discounted payoffs per node and child links.

Two engines produce the same :class:`Lattice` shape.

``TREE``
    One node per sign prefix.  Level ``k`` has ``2**k`` nodes; the prefix
    ``(s_1, ..., s_k)`` sits at index ``sum(bit_j * 2**(k - j))`` with
    ``bit_j = 1`` for an up move, so the children of node ``i`` are ``2i``
    (down) and ``2i + 1`` (up).  Works for any payoff.

``MEMO``
    Nodes are canonical states of an exact payoff reducer.  Markov payoffs
    (vanilla claims with constant or proportional penalties) use the up-move
    count.  Russian claims with proportional penalties use the drawdown below
    the running maximum; their tables are normalized by the current stock price
    (``scaled`` lattices), and a transition multiplies node values by the
    price ratio ``exp(log_up)`` or ``exp(log_down)``.

Payoff tables are discounted to time 0 with ``exp(-r k T/n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .market import MarketParams, StepDistribution
from .payoff import PathState, PayoffFunctional

TREE_CAP = 24


class Engine(str, Enum):
    TREE = "tree"
    MEMO = "memo"


@dataclass
class Level:
    Y: np.ndarray
    X: np.ndarray
    sigma: np.ndarray  # stock price divided by the node scale
    down: np.ndarray | None = None
    up: np.ndarray | None = None
    states: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.Y.size


@dataclass
class Lattice:
    params: MarketParams
    dist: StepDistribution
    payoff: PayoffFunctional
    engine: Engine
    levels: list[Level]
    scaled: bool = False

    @property
    def n(self) -> int:
        return self.dist.n

    @property
    def ratio_up(self) -> float:
        return math.exp(self.dist.log_up) if self.scaled else 1.0

    @property
    def ratio_down(self) -> float:
        return math.exp(self.dist.log_down) if self.scaled else 1.0

    @property
    def scale0(self) -> float:
        return self.params.z if self.scaled else 1.0

    def children(self, k: int, idx):
        """``(down_child, up_child)`` indices at level ``k + 1``."""
        idx = np.asarray(idx)
        if self.engine is Engine.TREE:
            return 2 * idx, 2 * idx + 1
        lv = self.levels[k]
        return lv.down[idx], lv.up[idx]

    def child(self, k: int, idx, up):
        d, u = self.children(k, idx)
        return np.where(up, u, d)

    @property
    def offsets(self) -> np.ndarray:
        """Start of each level in level-concatenated node tables."""
        if getattr(self, "_offsets", None) is None:
            self._offsets = np.concatenate(([0], np.cumsum([lv.size for lv in self.levels])))
        return self._offsets

    def flatten(self, tables) -> np.ndarray:
        """Concatenate per-level tables (one entry per node) into one array indexed by ``offsets[k] + idx``."""
        return np.concatenate([np.asarray(t).reshape(-1) for t in tables])

    def child_at(self, ks, idx, up) -> np.ndarray:
        """Children of nodes sitting at (possibly different) levels ``ks < n``."""
        idx = np.asarray(idx)
        up = np.asarray(up, dtype=bool)
        if self.engine is Engine.TREE:
            return 2 * idx + up
        if getattr(self, "_flat_children", None) is None:
            self._flat_children = (self.flatten([lv.down for lv in self.levels[:-1]]),
                                   self.flatten([lv.up for lv in self.levels[:-1]]))
        d, u = self._flat_children
        pos = self.offsets[np.asarray(ks)] + idx
        return np.where(up, u[pos], d[pos])

    def node_of(self, signs) -> tuple[int, int]:
        k, idx = 0, 0
        for s in signs:
            idx = int(self.child(k, idx, s > 0))
            k += 1
        return k, idx

    def continuation(self, k: int, nxt: np.ndarray) -> np.ndarray:
        """Conditional expectation at level ``k`` of a level-``k+1`` table (in level-``k`` units)."""
        p = self.dist.p_up
        if self.engine is Engine.TREE:
            pair = nxt.reshape(-1, 2)
            return p * pair[:, 1] + (1.0 - p) * pair[:, 0]
        lv = self.levels[k]
        return p * self.ratio_up * nxt[lv.up] + (1.0 - p) * self.ratio_down * nxt[lv.down]


def _check_finite(F, D, k):
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(D))):
        raise ValueError(f"non-finite payoff value at step {k}")
    if np.any(F < 0) or np.any(D < 0):
        raise ValueError(f"negative payoff value at step {k}")


def build_tree(params: MarketParams, dist: StepDistribution, payoff: PayoffFunctional,
               cap: int = TREE_CAP) -> Lattice:
    n = dist.n
    if n > cap:
        raise ValueError(f"full-tree engine is capped at n = {cap} steps (got n = {n}); use the memo engine")
    z = params.z
    state = payoff.init_state(z, size=1)
    logs = np.zeros(1)
    incr = np.array([dist.log_down, dist.log_up])
    levels = []
    for k in range(n + 1):
        F, D = payoff.values(state)
        _check_finite(F, D, k)
        disc = dist.discount(k)
        levels.append(Level(Y=disc * F, X=disc * (F + D), sigma=state.x))
        if k == n:
            break
        logs = np.repeat(logs, 2) + np.tile(incr, logs.size)
        state = payoff.advance(state.repeat2(), dist.dt, z * np.exp(logs))
        state.t = np.full(logs.size, (k + 1) * params.T / n)
    return Lattice(params, dist, payoff, Engine.TREE, levels)


def build_memo(params: MarketParams, dist: StepDistribution, payoff: PayoffFunctional) -> Lattice:
    kind = payoff.reducer_kind
    if kind == "markov":
        return _build_markov(params, dist, payoff)
    if kind == "russian":
        return _build_russian(params, dist, payoff)
    raise ValueError(f"payoff {payoff.label!r} has no exact state reducer; use the tree engine")


def build_lattice(params, dist, payoff, engine: Engine | str = Engine.TREE, cap: int = TREE_CAP) -> Lattice:
    engine = Engine(engine)
    if engine is Engine.TREE:
        return build_tree(params, dist, payoff, cap)
    return build_memo(params, dist, payoff)


def _build_markov(params, dist, payoff) -> Lattice:
    n, z = dist.n, params.z
    levels = []
    for k in range(n + 1):
        ups = np.arange(k + 1)
        x = z * np.exp(ups * dist.log_up + (k - ups) * dist.log_down)
        st = PathState(t=np.full(k + 1, k * params.T / n), x=x, x0=np.full(k + 1, z), runmax=x,
                       int_f=np.zeros(k + 1), int_d=np.zeros(k + 1))
        F, D = payoff.values(st)
        _check_finite(F, D, k)
        disc = dist.discount(k)
        lv = Level(Y=disc * F, X=disc * (F + D), sigma=x, states=ups[:, None])
        if k < n:
            lv.down, lv.up = ups, ups + 1
        levels.append(lv)
    return Lattice(params, dist, payoff, Engine.MEMO, levels)


def _build_russian(params, dist, payoff) -> Lattice:
    """Drawdown states ``(mode, key)``; mode 0: running maximum still below the floor ``m``."""
    n, z = dist.n, params.z
    lu, ld = dist.log_up, dist.log_down
    d0 = math.log(payoff.claim.floor / z) if payoff.claim.floor > 0 else -math.inf
    delta = payoff.penalty.delta if payoff.penalty.kind == "proportional" else 0.0
    symmetric_steps = lu == -ld

    if symmetric_steps:
        # key: net up count (floor mode) or net down count since the maximum (max mode)
        def drawdown(st):
            return np.where(st[:, 0] == 0, d0 - st[:, 1] * lu, st[:, 1] * lu)

        def step(st, up):
            mode, j = st[:, 0], st[:, 1]
            out = st.copy()
            fl = mode == 0
            jj = j + (1 if up else -1)
            reach = fl & (d0 - jj * lu <= 0)
            out[fl, 1] = jj[fl]
            out[reach] = (1, 0)
            mx = ~fl
            w = j[mx] + (-1 if up else 1)
            out[mx, 1] = np.maximum(w, 0)
            return out

        def encode(st):
            return st[:, 0] * (2 * n + 1) + st[:, 1] + n

        root = np.array([[1, 0]] if d0 <= 0 else [[0, 0]], dtype=np.int64)
    else:
        # key: (ups, downs) since the start (floor mode) or since the maximum (max mode)
        def drawdown(st):
            s = st[:, 1] * lu + st[:, 2] * ld
            return np.where(st[:, 0] == 0, d0 - s, -s)

        def step(st, up):
            out = st.copy()
            out[:, 1 if up else 2] += 1
            dd = drawdown(out)
            out[dd <= 0] = (1, 0, 0)
            return out

        def encode(st):
            return (st[:, 0] * (n + 1) + st[:, 1]) * (n + 1) + st[:, 2]

        root = np.array([[1, 0, 0]] if d0 <= 0 else [[0, 0, 0]], dtype=np.int64)

    levels = []
    states = root
    for k in range(n + 1):
        ratio = np.exp(drawdown(states))  # running max (or floor) over current price
        F = ratio
        D = np.full_like(F, delta)
        _check_finite(F, D, k)
        disc = dist.discount(k)
        lv = Level(Y=disc * F, X=disc * (F + D), sigma=np.ones_like(F), states=states)
        if k < n:
            dn, up = step(states, False), step(states, True)
            both = np.concatenate([dn, up])
            _, first, inv = np.unique(encode(both), return_index=True, return_inverse=True)
            inv = inv.reshape(-1)
            lv.down, lv.up = inv[: len(states)], inv[len(states):]
            states = both[first]
        levels.append(lv)
    return Lattice(params, dist, payoff, Engine.MEMO, levels, scaled=True)
