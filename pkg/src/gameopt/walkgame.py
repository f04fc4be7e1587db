"""Dynkin game on a scaled random walk with smooth payoffs, and its explicit error bound.

The walk is ``Xi_k = sqrt(T/n) (xi_1 + ... + xi_k)``.  The holder receives
``f(t, x)``, the writer pays ``g(t, x) >= f(t, x)`` when cancelling first, and
ties go to the holder.  There is no discounting.

For i.i.d. steps with mean 0 and variance 1 embedded in Brownian motion by
exit times ``Theta``, the distance between the walk value and the Brownian game
value is at most::

    (rho T / sqrt(n)) (3 |Lf| + 3 |Lg| + |f_t| + |g_t|) + (T/n)(|Lf| + |Lg|)

with ``rho = sqrt(Var Theta)``, ``Lh = h_t + h_xx / 2`` and sup norms over
``[0, inf) x R``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Fn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SmoothPayoffPair:
    """Smooth ``f <= g`` with declared sup norms of ``Lf``, ``Lg``, ``f_t`` and ``g_t``."""

    name: str
    f: Fn
    g: Fn
    norms: dict
    Lf: Fn | None = None  # analytic generators, used by the norm audit
    Lg: Fn | None = None
    ft: Fn | None = None
    gt: Fn | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key in ("Lf_sup", "Lg_sup", "ft_sup", "gt_sup"):
            v = self.norms.get(key)
            if v is None or not math.isfinite(v) or v < 0:
                raise ValueError(f"norm {key} must be finite and non-negative")

    def audit(self, points: int = 10_000, seed: int = 0, t_max: float = 2.0, x_max: float = 6.0) -> dict:
        """Sample-grid check of ``g >= f`` and of the declared norms (within a relative ``1e-6``)."""
        rng = np.random.default_rng(seed)
        side = int(math.isqrt(points // 2))
        tg, xg = np.meshgrid(np.linspace(0.0, t_max, side), np.linspace(-x_max, x_max, side))
        t = np.concatenate([tg.ravel(), rng.uniform(0, t_max, points - side * side)])
        x = np.concatenate([xg.ravel(), rng.normal(0, x_max / 3, points - side * side)])
        out = {"order_ok": bool(np.all(self.g(t, x) >= self.f(t, x) - 1e-12))}
        ok = out["order_ok"]
        for key, fn in (("Lf_sup", self.Lf), ("Lg_sup", self.Lg), ("ft_sup", self.ft), ("gt_sup", self.gt)):
            if fn is None:
                continue
            seen = float(np.max(np.abs(fn(t, x))))
            out[key] = seen
            ok &= seen <= self.norms[key] * (1 + 1e-6) + 1e-15
        out["passed"] = bool(ok)
        return out


def _bump(A, s, lam, mu=0.0):
    def h(t, x):
        return A * np.exp(-lam * np.asarray(t, float)) * np.exp(-0.5 * ((np.asarray(x, float) - mu) / s) ** 2)

    def h_t(t, x):
        return -lam * h(t, x)

    def Lh(t, x):
        y = ((np.asarray(x, float) - mu) / s) ** 2
        return h(t, x) * (-lam + (y - 1.0) / (2 * s * s))

    return h, h_t, Lh


def _bump_norms(A, s, lam):
    # |L h| peaks at the centre (t = 0): A (lam + 1/(2 s^2)); the side lobes stay below A e^{-3/2}/s^2.
    centre = abs(A) * (lam + 0.5 / (s * s))
    lobe = abs(A) * math.exp(-1.5 - lam * s * s) / (s * s)
    return max(centre, lobe), lam * abs(A)


def gaussian_bump(A: float = 1.0, s: float = 0.5, lam: float = 0.5, c: float = 0.2, x0: float = 0.8) -> SmoothPayoffPair:
    """``f = A e^{-lam t} exp(-(x - x0)^2 / 2s^2)`` and ``g = f + c``."""
    if c < 0 or s <= 0 or lam < 0:
        raise ValueError("need c >= 0, s > 0, lam >= 0")
    f, f_t, Lf = _bump(A, s, lam, x0)
    Ln, tn = _bump_norms(A, s, lam)
    return SmoothPayoffPair(
        "gaussian_bump", f, lambda t, x: f(t, x) + c,
        {"Lf_sup": Ln, "Lg_sup": Ln, "ft_sup": tn, "gt_sup": tn},
        Lf, Lf, f_t, f_t, {"A": A, "s": s, "lam": lam, "c": c, "x0": x0},
    )


def shifted_bump(A: float = 1.0, s: float = 0.5, lam: float = 0.5, c: float = 1.0, x0: float = 0.8,
                 mu: float = 0.5) -> SmoothPayoffPair:
    """``f`` as in :func:`gaussian_bump`; ``g = c + A e^{-lam t} exp(-(x - x0 - mu)^2 / 2s^2)`` with ``c >= A``."""
    if c < A:
        raise ValueError("need c >= A so that g >= f everywhere")
    f, f_t, Lf = _bump(A, s, lam, x0)
    g0, g_t, Lg = _bump(A, s, lam, x0 + mu)
    Ln, tn = _bump_norms(A, s, lam)
    return SmoothPayoffPair(
        "shifted_bump", f, lambda t, x: c + g0(t, x),
        {"Lf_sup": Ln, "Lg_sup": Ln, "ft_sup": tn, "gt_sup": tn},
        Lf, Lg, f_t, g_t, {"A": A, "s": s, "lam": lam, "c": c, "x0": x0, "mu": mu},
    )


PAIRS = {"gaussian_bump": gaussian_bump, "shifted_bump": shifted_bump}


def make_pair(name: str, **kw) -> SmoothPayoffPair:
    if name not in PAIRS:
        raise ValueError(f"unknown smooth pair {name!r}; choose from {sorted(PAIRS)}")
    return PAIRS[name](**kw)


# ---------------------------------------------------------------- step laws


@dataclass(frozen=True)
class StepLaw:
    """Two-point law ``xi = a`` w.p. ``p``, ``xi = -b`` otherwise, with ``a b = 1`` (mean 0, variance 1)."""

    name: str
    a: float
    b: float

    def __post_init__(self) -> None:
        if self.a <= 0 or self.b <= 0:
            raise ValueError("two-point law needs a, b > 0")
        if abs(self.a * self.b - 1.0) > 1e-12:
            raise ValueError("unit variance requires a * b = 1")

    @property
    def p(self) -> float:
        return self.b / (self.a + self.b)

    @property
    def rho(self) -> float:
        """Exact ``sqrt(Var Theta)`` for the exit time of Brownian motion from ``(-b, a)``."""
        return math.sqrt((self.a**2 + self.b**2) / 3.0)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.where(rng.random(size) < self.p, self.a, -self.b)

    @property
    def rademacher(self) -> bool:
        return self.a == 1.0 and self.b == 1.0


def rademacher() -> StepLaw:
    return StepLaw("rademacher", 1.0, 1.0)


def two_point(a: float) -> StepLaw:
    return StepLaw(f"two_point({a:g})", float(a), 1.0 / float(a))


# ---------------------------------------------------------------- game value


def walk_game_value(pair: SmoothPayoffPair, law: StepLaw, n: int, T: float, full: bool = False):
    """Backward induction on the recombining Rademacher lattice."""
    if not law.rademacher:
        raise ValueError("walk_game_value supports the Rademacher step law only")
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    h = math.sqrt(T / n)
    x = h * (2.0 * np.arange(n + 1) - n)
    V = pair.f(np.full(n + 1, T), x)
    levels = [V]
    for k in range(n - 1, -1, -1):
        x = h * (2.0 * np.arange(k + 1) - k)
        t = np.full(k + 1, k * T / n)
        cont = 0.5 * (V[1:] + V[:-1])
        V = np.minimum(pair.g(t, x), np.maximum(pair.f(t, x), cont))
        if full:
            levels.append(V)
    if full:
        return float(V[0]), levels[::-1]
    return float(V[0])


def brute_force_walk_value(pair: SmoothPayoffPair, n: int, T: float) -> tuple[float, float]:
    """``(min-max, max-min)`` over all consistent stopping-rule pairs on the Rademacher walk (``n <= 3``)."""
    from .dynkin import _all_sign_sequences, enumerate_rules

    if n > 3:
        raise ValueError("walk brute force is capped at n = 3")
    rules = enumerate_rules(n)
    seqs = _all_sign_sequences(n)
    h = math.sqrt(T / n)
    pos = np.concatenate([np.zeros((len(seqs), 1)), h * np.cumsum(seqs, axis=1)], axis=1)
    times = np.arange(n + 1) * T / n
    f = pair.f(np.broadcast_to(times, pos.shape), pos)
    g = pair.g(np.broadcast_to(times, pos.shape), pos)
    E = np.zeros((len(rules), len(rules)))
    for p in range(len(seqs)):
        s = rules[:, p][:, None]
        t = rules[:, p][None, :]
        E += np.where(s < t, g[p][s], f[p][t]) / len(seqs)
    return float(E.max(axis=1).min()), float(E.min(axis=0).max())


# ---------------------------------------------------------------- bound


def lr_bound(pair: SmoothPayoffPair | dict, rho: float, T: float, n: int) -> float:
    norms = pair.norms if isinstance(pair, SmoothPayoffPair) else pair
    Lf, Lg, ft, gt = (float(norms[k]) for k in ("Lf_sup", "Lg_sup", "ft_sup", "gt_sup"))
    if min(Lf, Lg, ft, gt) < 0:
        raise ValueError("norms must be non-negative")
    if rho < 0:
        raise ValueError("rho must be non-negative")
    return (rho * T / math.sqrt(n)) * (3 * Lf + 3 * Lg + ft + gt) + (T / n) * (Lf + Lg)


# ---------------------------------------------------------------- rho


@dataclass
class ExitMoments:
    mean: float
    var: float
    var_std_error: float
    mean_std_error: float
    samples: int


def simulate_exit_times(a: float, b: float, samples: int, seed: int, dt: float | None = None,
                        block_size: int = 20_000) -> np.ndarray:
    """First exit times of standard Brownian motion from ``(-b, a)``.

    Grid of step ``dt`` (default ``min(a, b)^2 / 2000``) with the Brownian-bridge
    crossing test between grid points; hit times interpolated linearly, or at
    the step midpoint when the bridge test fires.  Block ``i`` uses
    ``Philox(SeedSequence([seed, i]))``.
    """
    from .embed import block_rng

    if dt is None:
        dt = min(a, b) ** 2 / 2000.0
    sd = math.sqrt(dt)
    out = []
    for blk, start in enumerate(range(0, samples, block_size)):
        size = min(block_size, samples - start)
        rng = block_rng(seed, blk)
        x = np.zeros(size)
        tau = np.full(size, np.nan)
        alive = np.arange(size)
        k = 0
        while alive.size:
            g = rng.standard_normal(alive.size)
            u = rng.random(alive.size)
            x0 = x[alive]
            x1 = x0 + sd * g
            over, under = x1 >= a, x1 <= -b
            inside = ~(over | under)
            with np.errstate(over="ignore"):
                pu = np.exp(-2.0 * (a - x0) * (a - x1) / dt)
                pd = np.exp(-2.0 * (x0 + b) * (x1 + b) / dt)
            brid = inside & (u < pu + pd)
            lev = np.where(over | (brid & (u < pu)), a, -b)
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(inside, 0.5, (lev - x0) / (x1 - x0))
            done = ~inside | brid
            tau[alive[done]] = (k + np.clip(frac[done], 0.0, 1.0)) * dt
            x[alive] = x1
            alive = alive[~done]
            k += 1
        out.append(tau)
    return np.concatenate(out)


def exit_moments(a: float, b: float, samples: int, seed: int, dt: float | None = None) -> ExitMoments:
    th = simulate_exit_times(a, b, samples, seed, dt)
    N = th.size
    m = float(np.mean(th))
    c = th - m
    var = float(np.mean(c**2)) * N / (N - 1)
    m4 = float(np.mean(c**4))
    return ExitMoments(m, var, math.sqrt(max(m4 - var * var, 0.0) / N), math.sqrt(var / N), N)


@dataclass
class RhoEstimate:
    rho_hat: float
    std_error: float
    rho2_hat: float
    rho2_std_error: float
    mean_theta: float
    samples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def estimate_rho(law: StepLaw, samples: int, seed: int, dt: float | None = None) -> RhoEstimate:
    """Monte Carlo ``sqrt(Var Theta)`` from simulated exit times of ``(-b, a)``."""
    if not isinstance(law, StepLaw):
        raise ValueError("estimate_rho needs a two-point step law")
    mom = exit_moments(law.a, law.b, samples, seed, dt)
    rho = math.sqrt(mom.var)
    return RhoEstimate(rho, mom.var_std_error / (2 * rho), mom.var, mom.var_std_error, mom.mean, mom.samples)


def exit_moment_oracle(a: float, b: float) -> tuple[float, float]:
    """``(E Theta, E Theta^2)`` from the boundary-value problems ``u''/2 = -1`` and ``w''/2 = -2u`` on ``(-b, a)``."""
    from scipy.integrate import solve_bvp

    xs = np.linspace(-b, a, 201)

    def rhs(x, y):
        # y = (u, u', w, w')
        return np.vstack([y[1], -2.0 * np.ones_like(x), y[3], -4.0 * y[0]])

    def bc(ya, yb):
        return np.array([ya[0], yb[0], ya[2], yb[2]])

    sol = solve_bvp(rhs, bc, xs, np.zeros((4, xs.size)), tol=1e-10, max_nodes=100_000)
    if not sol.success:
        raise RuntimeError(sol.message)
    u0, _, w0, _ = sol.sol(0.0)
    return float(u0), float(w0)
