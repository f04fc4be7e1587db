"""Versioned JSON container for game solutions and hedges.

Layout (``version`` 1)::

    {
      "format": "gameopt.solution",
      "version": 1,
      "header": {"params": {z, r, kappa, T}, "scheme": ..., "n": ..., "engine": "tree" | "memo",
                 "k_start": ..., "price": ..., "payoff": {"label", "claim", "penalty", "L", "config"}},
      "rules": {"writer": [[nodes at step 0], [nodes at step 1], ...], "holder": [...]},
      "lattice": null | {"down": [[...], ...], "up": [[...], ...]},
      "hedge": null | {"initial_capital": c, "gamma": [[...], ...], "beta": null | [[...], ...]}
    }

Rule entries list the level-``k`` nodes where the rule stops.  For the tree
engine a level-``k`` node index is the code of its sign prefix (first sign high,
1 = up), so the lists are stop sets of sign prefixes.  Memo lattices also store
their child maps.  ``gamma[k]`` and ``beta[k]`` hold the position over
``(k, k+1]`` keyed the same way.

Node values are not stored.  Loading rebuilds the lattice from the header,
re-solves it and checks the price, the child maps and (unless told otherwise)
the stop sets against the file.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .dynkin import GameSolution, StoppingRule, solve_lattice
from .hedge import HedgeStrategy
from .lattice import Engine, build_lattice
from .market import MarketParams, crr_step_params
from .payoff import PayoffFunctional, payoff_from_config

FORMAT = "gameopt.solution"
VERSION = 1


def _stop_lists(rule: StoppingRule) -> list[list[int]]:
    return [np.flatnonzero(s).tolist() for s in rule.stop]


def _masks(lists, sizes) -> list[np.ndarray]:
    out = []
    for nodes, size in zip(lists, sizes):
        m = np.zeros(size, bool)
        m[np.asarray(nodes, dtype=np.int64)] = True
        out.append(m)
    return out


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, shortest round-trip floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def payoff_record(payoff: PayoffFunctional) -> dict:
    return {**payoff.spec(), "config": payoff.config}


def solution_to_dict(solution: GameSolution, strategy: HedgeStrategy | None = None) -> dict:
    lat = solution.lattice
    if solution.payoff.config is None:
        raise ValueError("only catalogue payoffs (built by name) can be serialized")
    header = {
        "params": solution.params.to_dict(),
        "scheme": solution.dist.scheme.value,
        "n": solution.n,
        "engine": lat.engine.value,
        "k_start": solution.k_start,
        "price": solution.price,
        "payoff": payoff_record(solution.payoff),
    }
    lattice = None
    if lat.engine is Engine.MEMO:
        lattice = {"down": [lv.down.tolist() for lv in lat.levels[:-1]],
                   "up": [lv.up.tolist() for lv in lat.levels[:-1]]}
    hedge = None
    if strategy is not None:
        if strategy.lattice is not lat:
            raise ValueError("strategy was not built from this solution")
        hedge = {
            "initial_capital": strategy.initial_capital,
            "gamma": [np.asarray(g, dtype=float).tolist() for g in strategy.gamma],
            "beta": None if strategy.beta is None else [np.asarray(b, dtype=float).tolist() for b in strategy.beta],
        }
    return {
        "format": FORMAT,
        "version": VERSION,
        "header": header,
        "rules": {"writer": _stop_lists(solution.writer_rule), "holder": _stop_lists(solution.holder_rule)},
        "lattice": lattice,
        "hedge": hedge,
    }


def solution_from_dict(doc: dict, check_rules: bool = True, cap: int | None = None):
    """``(GameSolution, HedgeStrategy | None)`` from a container document."""
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported container version {doc.get('version')!r} (this build reads {VERSION})")
    h = doc["header"]
    params = MarketParams(**h["params"])
    dist = crr_step_params(params, h["n"], h["scheme"])
    payoff = payoff_from_config(h["payoff"]["config"])
    if payoff.label != h["payoff"]["label"]:
        raise ValueError("payoff config does not reproduce the stored label")
    kw = {} if cap is None else {"cap": cap}
    lat = build_lattice(params, dist, payoff, h["engine"], **kw)
    if lat.engine is Engine.MEMO:
        stored = doc.get("lattice") or {}
        for k, lv in enumerate(lat.levels[:-1]):
            if (lv.down.tolist() != stored["down"][k]) or (lv.up.tolist() != stored["up"][k]):
                raise ValueError(f"stored child map differs from the rebuilt lattice at step {k}")
    sol = solve_lattice(lat, int(h["k_start"]))
    if not math.isclose(sol.price, h["price"], rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError(f"re-solved price {sol.price!r} differs from stored {h['price']!r}")
    sizes = [lv.size for lv in lat.levels]
    writer = StoppingRule(sol.n, _masks(doc["rules"]["writer"], sizes), lat)
    holder = StoppingRule(sol.n, _masks(doc["rules"]["holder"], sizes), lat)
    if check_rules:
        for name, a, b in (("writer", writer, sol.writer_rule), ("holder", holder, sol.holder_rule)):
            if any(not np.array_equal(x, y) for x, y in zip(a.stop, b.stop)):
                raise ValueError(f"stored {name} rule differs from the re-solved one")
    sol = GameSolution(lat, sol.values, writer, holder, sol.price, sol.k_start)
    strat = None
    hd = doc.get("hedge")
    if hd is not None:
        gam = [np.asarray(g, dtype=float) for g in hd["gamma"]]
        bet = None if hd["beta"] is None else [np.asarray(b, dtype=float) for b in hd["beta"]]
        strat = HedgeStrategy(float(hd["initial_capital"]), gam, bet, writer, lat)
    return sol, strat


def save_solution(path, solution: GameSolution, strategy: HedgeStrategy | None = None) -> None:
    Path(path).write_text(dumps(solution_to_dict(solution, strategy)) + "\n")


def load_solution(path, check_rules: bool = True, cap: int | None = None):
    return solution_from_dict(json.loads(Path(path).read_text()), check_rules=check_rules, cap=cap)


def write_json(path, obj) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)
    if path is None or str(path) == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")


def clean(obj):
    """Make a report JSON-safe: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj
