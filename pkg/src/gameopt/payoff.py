"""Path-functional payoffs ``F_t`` (holder's claim) and ``Delta_t`` (writer's cancellation penalty).

Every functional is evaluated two ways:

* directly on a :class:`PiecewiseConstantPath` (``evaluate``), used by the
  brute-force oracles and by ``lipschitz_check``;
* incrementally on a vectorized :class:`PathState` (``init_state`` /
  ``advance`` / ``values``), used by the lattice builders and the Monte Carlo
  layer.

Integrals of step paths are exact sums over constancy intervals.  Integrands are
time-homogeneous functions of the price.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .market import PiecewiseConstantPath


@dataclass(frozen=True)
class Integrand:
    """Price integrand ``u -> fn(u)`` with ``|fn(x) - fn(y)| <= K|x - y|`` and ``|fn(x)| <= K|x|``."""

    fn: Callable[[np.ndarray], np.ndarray]
    K: float
    label: str = "custom"

    def __call__(self, x):
        return self.fn(x)


def linear_integrand(a: float = 1.0) -> Integrand:
    return Integrand(lambda x, a=a: a * np.asarray(x, dtype=float), abs(a), f"{a}*x")


@dataclass
class PathState:
    """Running summary of a step path, vectorized over nodes or Monte Carlo paths."""

    t: np.ndarray
    x: np.ndarray
    x0: np.ndarray
    runmax: np.ndarray
    int_f: np.ndarray
    int_d: np.ndarray

    def take(self, idx) -> PathState:
        return PathState(*(np.asarray(getattr(self, f))[idx] for f in _STATE_FIELDS))

    def put(self, idx, other: PathState) -> None:
        for f in _STATE_FIELDS:
            getattr(self, f)[idx] = getattr(other, f)

    def repeat2(self) -> PathState:
        return PathState(*(np.repeat(getattr(self, f), 2) for f in _STATE_FIELDS))


_STATE_FIELDS = ("t", "x", "x0", "runmax", "int_f", "int_d")


# ---------------------------------------------------------------- claims


@dataclass(frozen=True)
class Claim:
    """Holder's claim ``F_t``.  ``kind`` selects the closed form."""

    kind: str
    strike: float = 0.0
    floor: float = 0.0
    integrand: Integrand | None = None

    @property
    def lipschitz(self) -> float:
        if self.kind in ("integral_call", "integral_put", "asian_call", "asian_put"):
            return self.integrand.K
        return 1.0

    @property
    def markov(self) -> bool:
        return self.kind in ("put", "call")

    def from_summary(self, t, x, x0, runmax, integral):
        k = self.kind
        if k == "put":
            return np.maximum(self.strike - x, 0.0)
        if k == "call":
            return np.maximum(x - self.strike, 0.0)
        if k == "russian":
            return np.maximum(self.floor, runmax)
        if k == "integral_call":
            return np.maximum(integral - self.strike, 0.0)
        if k == "integral_put":
            return np.maximum(self.strike - integral, 0.0)
        if k in ("asian_call", "asian_put"):
            t = np.asarray(t, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                avg = np.where(t > 0, integral / np.where(t > 0, t, 1.0), self.integrand(x0))
            return np.maximum(avg - self.strike, 0.0) if k == "asian_call" else np.maximum(self.strike - avg, 0.0)
        raise ValueError(f"unknown claim kind {k!r}")

    def params(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "russian":
            out["m"] = self.floor
        else:
            out["K"] = self.strike
        if self.integrand is not None:
            out["integrand"] = self.integrand.label
        return out


@dataclass(frozen=True)
class Penalty:
    """Writer's cancellation penalty ``Delta_t``."""

    kind: str = "none"
    delta: float = 0.0
    integrand: Integrand | None = None

    @property
    def lipschitz(self) -> float:
        if self.kind == "proportional":
            return abs(self.delta)
        if self.kind == "integral":
            return self.integrand.K
        return 0.0

    @property
    def markov(self) -> bool:
        return self.kind in ("none", "constant", "proportional")

    def from_summary(self, x, integral):
        k = self.kind
        if k == "none":
            return np.zeros_like(np.asarray(x, dtype=float))
        if k == "constant":
            return np.full_like(np.asarray(x, dtype=float), self.delta)
        if k == "proportional":
            return self.delta * np.asarray(x, dtype=float)
        if k == "integral":
            return np.asarray(integral, dtype=float)
        raise ValueError(f"unknown penalty kind {k!r}")

    def params(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("constant", "proportional"):
            out["delta"] = self.delta
        if self.integrand is not None:
            out["integrand"] = self.integrand.label
        return out


# ---------------------------------------------------------------- functional


@dataclass(frozen=True)
class PayoffFunctional:
    """Pair ``(F, Delta)``; the writer's payment on cancellation is ``G = F + Delta``.

    ``lipschitz_L`` is the declared constant of the Lipschitz conditions on
    ``F`` and ``Delta``.  For catalogue payoffs it is the sum of the claim and
    penalty constants (at least 1).
    """

    claim: Claim
    penalty: Penalty = field(default_factory=Penalty)
    lipschitz_L: float | None = None
    label: str = ""
    config: dict | None = field(default=None, compare=False, hash=False, repr=False)  # catalogue arguments, if built by name

    def __post_init__(self) -> None:
        if self.lipschitz_L is None:
            object.__setattr__(self, "lipschitz_L", max(1.0, self.claim.lipschitz + self.penalty.lipschitz))
        if not self.label:
            object.__setattr__(self, "label", default_label(self.claim, self.penalty))

    @property
    def truncation_required(self) -> bool:
        return self.claim.kind in ("asian_call", "asian_put")

    @property
    def reducer_kind(self) -> str | None:
        """Which exact state reducer the memoized engine can use, if any."""
        if self.claim.markov and self.penalty.markov:
            return "markov"
        if self.claim.kind == "russian" and self.penalty.kind in ("none", "proportional"):
            return "russian"
        return None

    @property
    def zero_penalty(self) -> bool:
        return self.penalty.kind == "none" or (self.penalty.kind in ("constant", "proportional") and self.penalty.delta == 0)

    def spec(self) -> dict:
        return {"label": self.label, "claim": self.claim.params(), "penalty": self.penalty.params(), "L": self.lipschitz_L}

    # -- direct evaluation ------------------------------------------------

    def evaluate(self, path: PiecewiseConstantPath, t: float) -> tuple[float, float, float]:
        """``(F_t, Delta_t, G_t)`` using the path restricted to ``[0, t]``."""
        if t < 0 or t > path.horizon:
            raise ValueError(f"evaluation time {t} outside [0, {path.horizon}]")
        vals = path.values_upto(t)
        x = vals[-1]
        runmax = float(np.max(vals))
        dur = path.durations_upto(t)
        int_f = float(np.sum(self.claim.integrand(vals) * dur)) if self.claim.integrand is not None else 0.0
        int_d = float(np.sum(self.penalty.integrand(vals) * dur)) if self.penalty.integrand is not None else 0.0
        F = float(self.claim.from_summary(t, x, vals[0], runmax, int_f))
        D = float(self.penalty.from_summary(x, int_d))
        return F, D, F + D

    # -- incremental evaluation ------------------------------------------

    def init_state(self, x0, size: int | None = None) -> PathState:
        x = np.asarray(x0, dtype=float)
        if size is not None:
            x = np.full(size, float(x0))
        x = np.atleast_1d(x).copy()
        zeros = np.zeros_like(x)
        return PathState(t=zeros.copy(), x=x, x0=x.copy(), runmax=x.copy(), int_f=zeros.copy(), int_d=zeros.copy())

    def advance(self, state: PathState, dt, x_next) -> PathState:
        """Hold the current value for ``dt`` then jump to ``x_next``."""
        x = state.x
        int_f = state.int_f + self.claim.integrand(x) * dt if self.claim.integrand is not None else state.int_f
        int_d = state.int_d + self.penalty.integrand(x) * dt if self.penalty.integrand is not None else state.int_d
        x_next = np.asarray(x_next, dtype=float)
        return PathState(
            t=state.t + dt,
            x=x_next,
            x0=state.x0,
            runmax=np.maximum(state.runmax, x_next),
            int_f=int_f,
            int_d=int_d,
        )

    def values(self, state: PathState) -> tuple[np.ndarray, np.ndarray]:
        F = self.claim.from_summary(state.t, state.x, state.x0, state.runmax, state.int_f)
        D = self.penalty.from_summary(state.x, state.int_d)
        return np.asarray(F, dtype=float), np.asarray(D, dtype=float)


def default_label(claim: Claim, penalty: Penalty) -> str:
    c = claim.params()
    head = f"{claim.kind}(m={claim.floor:g})" if claim.kind == "russian" else f"{claim.kind}(K={claim.strike:g})"
    if penalty.kind == "none":
        tail = "no-penalty"
    elif penalty.kind == "integral":
        tail = f"integral-penalty({penalty.integrand.label})"
    else:
        tail = f"{penalty.kind}-penalty({penalty.delta:g})"
    if "integrand" in c:
        head = head[:-1] + f", f={c['integrand']})"
    return f"{head}+{tail}"


# ---------------------------------------------------------------- catalogue

CLAIMS = ("put", "call", "russian", "integral_call", "integral_put", "asian_call", "asian_put")
PENALTIES = ("none", "constant", "proportional", "integral")


def make_payoff(name: str, *, K: float = 100.0, m: float = 0.0, a: float = 1.0,
                penalty: str = "none", delta: float = 0.0, delta_a: float | None = None,
                L: float | None = None) -> PayoffFunctional:
    """Catalogue constructor.

    ``a`` scales the linear claim integrand ``f(x) = a x``; ``delta_a`` the linear
    penalty integrand for ``penalty="integral"`` (defaults to ``delta``).
    """
    if name not in CLAIMS:
        raise ValueError(f"unknown payoff {name!r}; choose from {CLAIMS}")
    if penalty not in PENALTIES:
        raise ValueError(f"unknown penalty {penalty!r}; choose from {PENALTIES}")
    integrand = linear_integrand(a) if name.startswith(("integral", "asian")) else None
    claim = Claim(kind=name, strike=float(K), floor=float(m), integrand=integrand)
    if penalty == "integral":
        pen = Penalty("integral", 0.0, linear_integrand(delta if delta_a is None else delta_a))
    else:
        if delta < 0:
            raise ValueError("penalty must be non-negative")
        pen = Penalty(penalty, float(delta) if penalty != "none" else 0.0)
    cfg = {"payoff": name, "K": float(K), "m": float(m), "a": float(a), "penalty": penalty, "delta": float(delta)}
    if delta_a is not None:
        cfg["delta_a"] = float(delta_a)
    if L is not None:
        cfg["L"] = float(L)
    return PayoffFunctional(claim, pen, lipschitz_L=L, config=cfg)


def payoff_from_config(cfg: dict) -> PayoffFunctional:
    """Build from a config mapping such as ``{"payoff": "russian", "m": 110, "penalty": "proportional", "delta": 0.02}``."""
    cfg = dict(cfg)
    name = cfg.pop("payoff", None) or cfg.pop("name")
    allowed = {"K", "m", "a", "penalty", "delta", "delta_a", "L"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ValueError(f"unknown payoff keys {sorted(unknown)}")
    return make_payoff(name, **cfg)


def with_penalty(payoff: PayoffFunctional, kind: str, delta: float) -> PayoffFunctional:
    cfg = None
    if payoff.config is not None and kind != "integral":
        cfg = {**payoff.config, "penalty": kind, "delta": float(delta)}
        cfg.pop("delta_a", None)
        cfg.pop("L", None)
    return replace(payoff, penalty=Penalty(kind, float(delta)), lipschitz_L=None, label="", config=cfg)


# ---------------------------------------------------------------- Lipschitz audit


def _sup_diff(v: PiecewiseConstantPath, w: PiecewiseConstantPath, s: float) -> float:
    times = np.union1d(v.breakpoints[v.breakpoints <= s], w.breakpoints[w.breakpoints <= s])
    a = v.values[np.searchsorted(v.breakpoints, times, side="right") - 1]
    b = w.values[np.searchsorted(w.breakpoints, times, side="right") - 1]
    return float(np.max(np.abs(a - b)))


def _ratio(lhs: float, rhs: float) -> float:
    if lhs <= 0:
        return 0.0
    return math.inf if rhs <= 0 else lhs / rhs


@dataclass
class LipschitzReport:
    max_ratio_2_1: float
    max_ratio_2_2: float
    passed: bool
    worst_2_1: tuple | None = None
    worst_2_2: tuple | None = None


def lipschitz_check(payoff: PayoffFunctional, sample_paths: Sequence[PiecewiseConstantPath],
                    times: Iterable[float], tol: float = 1e-9) -> LipschitzReport:
    """Ratios of the left to the right sides of both Lipschitz conditions, maximized over samples.

    The spatial condition is checked over all path pairs at every time; the
    temporal condition over every path and every ordered time pair ``s <= t``.
    """
    if len(sample_paths) < 2:
        raise ValueError("need at least two sample paths")
    times = sorted(float(t) for t in times)
    L = payoff.lipschitz_L
    cache = {(i, t): payoff.evaluate(p, t) for i, p in enumerate(sample_paths) for t in times}
    r1, w1 = 0.0, None
    for i in range(len(sample_paths)):
        for j in range(i + 1, len(sample_paths)):
            for s in times:
                Fi, Di, _ = cache[(i, s)]
                Fj, Dj, _ = cache[(j, s)]
                lhs = abs(Fi - Fj) + abs(Di - Dj)
                rhs = L * (s + 1) * _sup_diff(sample_paths[i], sample_paths[j], s)
                q = _ratio(lhs, rhs)
                if q > r1:
                    r1, w1 = q, (i, j, s)
    r2, w2 = 0.0, None
    for i, p in enumerate(sample_paths):
        for a, s in enumerate(times):
            for t in times[a:]:
                Fs, Ds, _ = cache[(i, s)]
                Ft, Dt, _ = cache[(i, t)]
                lhs = abs(Ft - Fs) + abs(Dt - Ds)
                sup_v = float(np.max(np.abs(p.values_upto(t))))
                vals = p.values[p.index_at(s): p.index_at(t) + 1]
                osc = float(np.max(np.abs(vals - p.value_at(s))))
                rhs = L * (abs(t - s) * (1 + sup_v) + osc)
                q = _ratio(lhs, rhs)
                if q > r2:
                    r2, w2 = q, (i, s, t)
    passed = r1 <= 1 + tol and r2 <= 1 + tol
    return LipschitzReport(r1, r2, passed, w1, w2)


# ---------------------------------------------------------------- test battery

BATTERY = (
    ("put", {"K": 100, "penalty": "constant", "delta": 10}),
    ("put", {"K": 110, "penalty": "constant", "delta": 5}),
    ("put", {"K": 110, "penalty": "proportional", "delta": 0.1}),
    ("call", {"K": 90, "penalty": "proportional", "delta": 0.08}),
    ("russian", {"m": 110, "penalty": "proportional", "delta": 0.05}),
    ("asian_put", {"K": 100, "penalty": "constant", "delta": 3}),
    ("integral_call", {"K": 90, "penalty": "proportional", "delta": 0.1}),
    ("integral_put", {"K": 60, "penalty": "constant", "delta": 5}),  # holder exercises at 0
    ("put", {"K": 110, "penalty": "integral", "delta": 0.05}),  # Delta_0 = 0: writer cancels at 0
)


def battery() -> list[PayoffFunctional]:
    """Mixed claims and penalties for ``z = 100, r = 0.05, kappa = 0.3, T = 1``; the last two end at time 0."""
    return [make_payoff(name, **kw) for name, kw in BATTERY]
