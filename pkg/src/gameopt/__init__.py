"""Lattice pricing, exercise rules and hedges for game (Israeli) options.

Submodules: ``market`` (CRR parameterizations), ``payoff`` (claims and
penalties), ``lattice`` (tree and memoized engines), ``dynkin`` (game values,
exercise rules, brute-force oracles), ``hedge`` (writer's hedge and its
verifier), ``embed`` (Skorokhod embedding Monte Carlo), ``walkgame``
(random-walk Dynkin games with smooth payoffs), ``io`` and ``cli``.
"""

from .dynkin import GameSolution, StoppingRule, brute_force_value, solve, value_against_fixed
from .hedge import HedgeStrategy, build_hedge, verify_hedge
from .lattice import Engine
from .market import MarketParams, Scheme, StepDistribution, crr_step_params
from .payoff import PayoffFunctional, make_payoff, payoff_from_config

__all__ = [
    "Engine", "GameSolution", "HedgeStrategy", "MarketParams", "PayoffFunctional", "Scheme",
    "StepDistribution", "StoppingRule", "brute_force_value", "build_hedge", "crr_step_params",
    "make_payoff", "payoff_from_config", "solve", "value_against_fixed", "verify_hedge",
]
