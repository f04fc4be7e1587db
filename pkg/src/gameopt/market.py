"""CRR lattice parameterizations of the Black-Scholes market and step-function paths."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class Scheme(str, Enum):
    """Binomial approximation of the Black-Scholes stock.

    ``MARTINGALE`` moves the log price by ``rT/n +- kappa*sqrt(T/n)`` with the
    risk-neutral up probability ``1/(exp(kappa*sqrt(T/n)) + 1)``.  ``SYMMETRIC``
    moves it by ``(r - kappa^2/2)T/n +- kappa*sqrt(T/n)`` with probability 1/2,
    which is not a martingale measure.
    """

    MARTINGALE = "martingale"
    SYMMETRIC = "symmetric"


@dataclass(frozen=True)
class MarketParams:
    """Black-Scholes primitives: spot ``z``, rate ``r``, volatility ``kappa``, expiry ``T``."""

    z: float
    r: float
    kappa: float
    T: float

    def __post_init__(self) -> None:
        for name in ("z", "r", "kappa", "T"):
            object.__setattr__(self, name, float(getattr(self, name)))
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.z <= 0:
            raise ValueError("initial price z must be positive")
        if self.kappa <= 0:
            raise ValueError("volatility kappa must be positive")
        if self.T <= 0:
            raise ValueError("expiry T must be positive")
        if self.r < 0:
            raise ValueError("interest rate r must be non-negative")

    def to_dict(self) -> dict:
        return {"z": self.z, "r": self.r, "kappa": self.kappa, "T": self.T}


@dataclass(frozen=True)
class StepDistribution:
    """One-period law of the n-step lattice."""

    n: int
    p_up: float
    log_up: float
    log_down: float
    r_n: float
    dt: float
    rate: float
    scheme: Scheme

    @property
    def up(self) -> float:
        return math.exp(self.log_up)

    @property
    def down(self) -> float:
        return math.exp(self.log_down)

    def discount(self, k) -> float | np.ndarray:
        """Discount factor ``exp(-r k T/n)`` from step ``k`` to time 0."""
        return np.exp(-self.rate * (np.asarray(k) * self.dt)) if np.ndim(k) else math.exp(-self.rate * k * self.dt)

    def time(self, k: int) -> float:
        return k * self.dt


def crr_step_params(params: MarketParams, n: int, scheme: Scheme | str = Scheme.MARTINGALE) -> StepDistribution:
    scheme = Scheme(scheme)
    if int(n) != n or n < 1:
        raise ValueError(f"step count must be a positive integer, got {n!r}")
    n = int(n)
    dt = params.T / n
    h = params.kappa * math.sqrt(dt)
    if scheme is Scheme.MARTINGALE:
        drift = params.r * dt
        p_up = 1.0 / (math.exp(h) + 1.0)
    else:
        drift = (params.r - 0.5 * params.kappa**2) * dt
        p_up = 0.5
    return StepDistribution(
        n=n,
        p_up=p_up,
        log_up=drift + h,
        log_down=drift - h,
        r_n=math.expm1(params.r * dt),
        dt=dt,
        rate=params.r,
        scheme=scheme,
    )


@dataclass(frozen=True)
class PiecewiseConstantPath:
    """Right-continuous step function: ``values[i]`` holds on ``[breakpoints[i], breakpoints[i+1])``."""

    breakpoints: np.ndarray
    values: np.ndarray
    horizon: float

    def __post_init__(self) -> None:
        bp = np.asarray(self.breakpoints, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        if bp.ndim != 1 or bp.shape != vals.shape or bp.size == 0:
            raise ValueError("breakpoints and values must be equal-length 1-d arrays")
        if bp[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if bp[-1] > self.horizon:
            raise ValueError("last breakpoint exceeds the horizon")

    def index_at(self, t: float) -> int:
        return int(np.searchsorted(self.breakpoints, t, side="right")) - 1

    def value_at(self, t: float) -> float:
        if t < 0 or t > self.horizon:
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        return float(self.values[self.index_at(t)])

    def values_upto(self, t: float) -> np.ndarray:
        """Values taken anywhere on ``[0, t]``."""
        return self.values[: self.index_at(t) + 1]

    def durations_upto(self, t: float) -> np.ndarray:
        """Lengths of the constancy intervals intersected with ``[0, t)``, aligned with ``values_upto``."""
        i = self.index_at(t)
        ends = np.append(self.breakpoints[1 : i + 1], t)
        return ends - self.breakpoints[: i + 1]

    def sup_between(self, s: float, t: float) -> float:
        i, j = self.index_at(s), self.index_at(t)
        return float(np.max(self.values[i : j + 1]))

    def restricted(self, t: float) -> PiecewiseConstantPath:
        i = self.index_at(t)
        return PiecewiseConstantPath(self.breakpoints[: i + 1], self.values[: i + 1], t)


def stock_path_from_signs(
    params: MarketParams,
    dist: StepDistribution,
    signs: Sequence[int],
    horizon: float | None = None,
) -> PiecewiseConstantPath:
    """Lattice stock path ``z exp(sum of log increments)`` with breakpoints at ``kT/n``.

    ``horizon`` defaults to ``len(signs) * T/n``, the span the signs determine.
    """
    signs = np.asarray(signs, dtype=int).reshape(-1)
    k = signs.size
    if k > dist.n:
        raise ValueError(f"{k} signs exceed the {dist.n}-step lattice")
    if np.any((signs != 1) & (signs != -1)):
        raise ValueError("signs must be +1 or -1")
    incr = np.where(signs > 0, dist.log_up, dist.log_down)
    logs = np.concatenate(([0.0], np.cumsum(incr)))
    values = params.z * np.exp(logs)
    times = np.array([j * params.T / dist.n for j in range(k + 1)])
    if horizon is None:
        horizon = times[-1]
    return PiecewiseConstantPath(times, values, float(horizon))
