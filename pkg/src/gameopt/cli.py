"""Command-line front end.

Config files are JSON.  Recognized keys (all optional unless a command needs them)::

    market        {"z", "r", "kappa", "T"}
    payoff        {"payoff": name, "K", "m", "a", "penalty", "delta", "delta_a", "L"}
    scheme        "martingale" | "symmetric"
    engine        "tree" | "memo"
    n             step count for price / backtest / diagnostics commands
    n_list        ascending step counts for convergence
    n_ref         reference step count (default 4 * max(n_list), at least 4096 on the memo engine)
    epsilon       truncation time for path-averaged payoffs (convergence and price)
    compare_schemes   also solve the other scheme (default true for Markov payoffs)
    reference_check   re-run the convergence reference at 2 * n_ref
    sim           {"paths", "oversample", "seed", "horizon_slack", "block_size", "workers"}
    solution      path of a serialized solution to load instead of solving
    save          path to write the solved (and hedged) solution container to
    walkgame      {"pair", "pair_params", "T", "n_list", "rho": "exact" | "estimate", "rho_samples", "seed"}
    oracle        {"battery": [payoff configs], "n_max", "saddle_n", "hedge_n", "perturb": {"k", "node", "bump"}}
    output        {"path": file or "-", "format": "json" | "csv"}
    allow_big     permit tree runs above n = 20
    timings       include wall-clock timings (makes output non-reproducible)

Flags mirror keys and win over the file: ``--seed``, ``--paths``, ``--oversample``,
``--workers``, ``--scheme``, ``--engine``, ``--n``, ``--out``, ``--format``,
``--allow-big``, ``--solution``, ``--save``.

JSON reports are written with sorted keys.  CSV layouts:

* convergence: ``n,V,V_hat,error,scheme_gap,envelope_ratio`` (plus ``runtime`` with timings);
* hedge-backtest and exercise-quality: ``path_id,Q_value,shortfall_sup,theta_n,n_hits``
  (the JSON report then goes to stdout);
* walkgame: ``n,V_n,V_4n,diff,bound_n,bound_4n,holds``;
* everything else: ``key,value`` pairs of the flattened report.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as gio
from .dynkin import GameSolution, brute_force_value, rule_count, solve_lattice, truncation_step, value_against_fixed
from .dynkin import HOLDER_FIXED, WRITER_FIXED
from .embed import SimConfig, embedding_diagnostics, evaluate_exercise_quality, simulate_shortfall, write_traces
from .hedge import build_hedge, perturbed, verify_hedge
from .lattice import TREE_CAP, Engine, build_lattice
from .market import MarketParams, Scheme, crr_step_params, stock_path_from_signs
from .payoff import BATTERY, PayoffFunctional, lipschitz_check, payoff_from_config
from . import walkgame as wg

BIG_TREE = 20
DEFAULT_MARKET = {"z": 100.0, "r": 0.05, "kappa": 0.3, "T": 1.0}
DEFAULT_PAYOFF = {"payoff": "put", "K": 100.0, "penalty": "constant", "delta": 10.0}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


@dataclass
class RunConfig:
    market: MarketParams
    payoff: PayoffFunctional
    scheme: Scheme = Scheme.MARTINGALE
    engine: Engine | None = None
    n_list: list[int] = field(default_factory=lambda: [16])
    sim: SimConfig | None = None
    out_path: str = "-"
    out_format: str = "json"
    allow_big: bool = False
    raw: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.n_list:
            raise ConfigError("n_list must be non-empty")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ConfigError("n_list must be strictly ascending")
        if any(int(n) != n or n < 1 for n in self.n_list):
            raise ConfigError("step counts must be positive integers")
        if self.out_format not in ("json", "csv"):
            raise ConfigError("format must be json or csv")

    @property
    def n(self) -> int:
        return int(self.raw["n"]) if "n" in self.raw else self.n_list[-1]

    def engine_for(self, n: int) -> Engine:
        if self.engine is not None:
            return self.engine
        return Engine.MEMO if self.payoff.reducer_kind else Engine.TREE

    def check_size(self, n: int, engine: Engine) -> None:
        if engine is Engine.TREE:
            if n > TREE_CAP:
                raise ConfigError(f"the full tree is capped at n = {TREE_CAP} (got n = {n}); "
                                  "use --engine memo for payoffs with a state reducer")
            if n > BIG_TREE and not self.allow_big:
                raise ConfigError(f"full tree with n = {n} > {BIG_TREE} needs --allow-big (2^n nodes)")
        elif not self.payoff.reducer_kind:
            raise ConfigError(f"payoff {self.payoff.label} has no state reducer; use --engine tree")


def load_config(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    raw = dict(raw)
    flag_map = {"scheme": "scheme", "engine": "engine", "allow_big": "allow_big", "solution": "solution", "save": "save"}
    for flag, key in flag_map.items():
        v = getattr(args, flag, None)
        if v not in (None, False):
            raw[key] = v
    if getattr(args, "n", None) is not None:
        raw["n"] = args.n
    sim = dict(raw.get("sim") or {})
    for flag in ("seed", "paths", "oversample", "workers"):
        v = getattr(args, flag, None)
        if v is not None:
            sim[flag] = v
    raw["sim"] = sim
    out = dict(raw.get("output") or {})
    if getattr(args, "out", None) is not None:
        out["path"] = args.out
    if getattr(args, "format", None) is not None:
        out["format"] = args.format
    raw["output"] = out
    try:
        market = MarketParams(**{**DEFAULT_MARKET, **(raw.get("market") or {})})
        payoff = payoff_from_config(raw.get("payoff") or DEFAULT_PAYOFF)
        n_list = raw.get("n_list") or [int(raw.get("n", 16))]
        simcfg = SimConfig(**{k: v for k, v in sim.items()}) if sim else SimConfig()
        return RunConfig(
            market=market, payoff=payoff, scheme=Scheme(raw.get("scheme", "martingale")),
            engine=Engine(raw["engine"]) if raw.get("engine") else None,
            n_list=[int(n) for n in n_list], sim=simcfg,
            out_path=str(out.get("path", "-")), out_format=out.get("format", "json"),
            allow_big=bool(raw.get("allow_big", False)), raw=raw,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------- output


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _flatten(obj[k], f"{prefix}{k}.")
    elif isinstance(obj, list) and obj and isinstance(obj[0], (dict, list)):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}{i}.")
    else:
        yield prefix.rstrip("."), json.dumps(obj) if isinstance(obj, list) else obj


def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    return buf.getvalue()


def emit(cfg: RunConfig, report: dict, table: tuple | None = None) -> None:
    report = gio.clean(report)
    if cfg.out_format == "json":
        gio.write_json(cfg.out_path, report)
        return
    if table is None:
        text = _csv_text(("key", "value"), list(_flatten(report)))
    else:
        text = _csv_text(*table)
    if cfg.out_path == "-":
        sys.stdout.write(text)
    else:
        Path(cfg.out_path).write_text(text)


# ---------------------------------------------------------------- commands


def _solve(cfg: RunConfig, n: int, scheme: Scheme | None = None, engine: Engine | None = None,
           k_start: int = 0) -> GameSolution:
    engine = engine or cfg.engine_for(n)
    cfg.check_size(n, engine)
    dist = crr_step_params(cfg.market, n, scheme or cfg.scheme)
    return solve_lattice(build_lattice(cfg.market, dist, cfg.payoff, engine), k_start)


def _epsilon_step(cfg: RunConfig, n: int) -> int:
    return truncation_step(n, float(cfg.raw.get("epsilon", 0.0)), cfg.market.T)


@dataclass
class Result:
    report: dict
    code: int = 0
    table: tuple | None = None  # (header, rows) for CSV output
    written: bool = False  # output already written by the command


def cmd_price(cfg: RunConfig) -> Result:
    n = cfg.n
    k_eps = _epsilon_step(cfg, n)
    sol = _solve(cfg, n, k_start=k_eps)
    F0, D0 = (float(v[0]) for v in cfg.payoff.values(cfg.payoff.init_state(cfg.market.z, size=1)))
    rep = {
        "command": "price",
        "n": n,
        "scheme": cfg.scheme.value,
        "engine": sol.engine.value,
        "payoff": gio.payoff_record(cfg.payoff),
        "market": cfg.market.to_dict(),
        "price": sol.price,
        "F0": F0,
        "Delta0": D0,
        "k_start": sol.k_start,
        "writer_stop_set_sizes": sol.writer_rule.stop_counts(),
        "holder_stop_set_sizes": sol.holder_rule.stop_counts(),
    }
    compare = cfg.raw.get("compare_schemes", cfg.payoff.reducer_kind == "markov")
    if compare:
        other = Scheme.SYMMETRIC if cfg.scheme is Scheme.MARTINGALE else Scheme.MARTINGALE
        rep["price_" + other.value] = _solve(cfg, n, other, k_start=k_eps).price
    if cfg.raw.get("save"):
        strat = build_hedge(sol) if sol.dist.scheme is Scheme.MARTINGALE and k_eps == 0 else None
        gio.save_solution(cfg.raw["save"], sol, strat)
        rep["saved"] = str(cfg.raw["save"])
    return Result(rep)


@dataclass
class ConvergenceReport:
    rows: list[dict]
    reference: float
    n_ref: int
    reference_engine: str
    fitted_alpha: float | None
    envelope_C: float | None
    monotone_within_2x: bool
    reference_check: dict | None = None
    truncation_rate: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def envelope(n: int) -> float:
    return n**-0.25 * math.log(n) ** 0.75


def fit_alpha(ns, errors) -> float | None:
    pts = [(math.log(n), math.log(e)) for n, e in zip(ns, errors) if e > 0]
    if len(pts) < 2:
        return None
    x, y = np.array(pts).T
    slope = np.polyfit(x, y, 1)[0]
    return float(-slope)


def monotone_within(errors, slack: float = 2.0) -> bool:
    """No error exceeds ``slack`` times the largest error seen at smaller n."""
    worst = -math.inf
    for e in errors:
        if worst > -math.inf and e > slack * worst:
            return False
        worst = max(worst, e)
    return True


def convergence_report(cfg: RunConfig, n_list=None, n_ref: int | None = None,
                       compare_schemes: bool | None = None, reference_check: bool = False,
                       timings: bool = False) -> ConvergenceReport:
    """Errors of ``V^(n)`` against a fine-lattice reference; also the gap to the other scheme."""
    n_list = list(n_list or cfg.n_list)
    ref_engine = Engine.MEMO if cfg.payoff.reducer_kind else Engine.TREE
    if ref_engine is Engine.TREE:
        n_ref = n_ref or (TREE_CAP if cfg.allow_big else BIG_TREE)
        n_list = [n for n in n_list if 4 * n <= n_ref]
        if not n_list:
            raise ConfigError(f"no step count in n_list satisfies 4 n <= n_ref = {n_ref} on the full tree")
    else:
        n_ref = n_ref or max(4096, 4 * max(n_list))
    if n_ref < 4 * max(n_list):
        raise ConfigError("n_ref must be at least 4 * max(n_list)")
    if compare_schemes is None:
        compare_schemes = cfg.payoff.reducer_kind == "markov"

    def value(n, scheme):
        return _solve(cfg, n, scheme, ref_engine, _epsilon_step(cfg, n)).price

    ref = value(n_ref, Scheme.MARTINGALE)
    rows = []
    for n in n_list:
        t0 = time.perf_counter()
        v = value(n, Scheme.MARTINGALE)
        vh = value(n, Scheme.SYMMETRIC) if compare_schemes else None
        err = abs(v - ref)
        row = {"n": n, "V": v, "V_hat": vh, "error": err,
               "scheme_gap": None if vh is None else abs(v - vh), "envelope_ratio": err / envelope(n)}
        if timings:
            row["runtime"] = time.perf_counter() - t0
        rows.append(row)
    errors = [r["error"] for r in rows]
    env_c = max(r["envelope_ratio"] for r in rows)
    check = None
    if reference_check:
        ref2 = value(2 * n_ref, Scheme.MARTINGALE)
        changes = [abs(abs(r["V"] - ref2) - r["error"]) for r in rows]
        smallest = min(errors)
        check = {"n_ref2": 2 * n_ref, "reference2": ref2, "max_change": max(changes),
                 "smallest_error": smallest, "passed": max(changes) < 0.1 * smallest}
    rate = "n^(-1/12) (ln n)^(1/4)" if cfg.payoff.truncation_required else None
    return ConvergenceReport(rows, ref, n_ref, ref_engine.value, fit_alpha(n_list, errors), env_c,
                             monotone_within(errors), check, rate)


def cmd_convergence(cfg: RunConfig) -> Result:
    timings = bool(cfg.raw.get("timings", False))
    rep = convergence_report(cfg, cfg.raw.get("n_list") or cfg.n_list, cfg.raw.get("n_ref"),
                             cfg.raw.get("compare_schemes"), bool(cfg.raw.get("reference_check", False)), timings)
    if not rep.monotone_within_2x:
        print("warning: errors are not monotone within a factor 2 along n_list", file=sys.stderr)
    d = {"command": "convergence", "payoff": gio.payoff_record(cfg.payoff), "market": cfg.market.to_dict(),
         **rep.to_dict()}
    cols = ["n", "V", "V_hat", "error", "scheme_gap", "envelope_ratio"] + (["runtime"] if timings else [])
    return Result(d, 0, (cols, [[r[c] for c in cols] for r in rep.rows]))


def _sim_output(cfg: RunConfig, rep, name: str) -> Result:
    d = {"command": name, "payoff": gio.payoff_record(cfg.payoff), "market": cfg.market.to_dict(),
         "sim": cfg.sim.__dict__, **rep.to_dict()}
    if cfg.out_format == "csv":
        if cfg.out_path == "-":
            raise ConfigError("CSV traces need --out PATH")
        write_traces(rep, cfg.out_path)
        gio.write_json("-", gio.clean(d))
        return Result(d, written=True)
    return Result(d)


def cmd_hedge_backtest(cfg: RunConfig):
    if cfg.sim is None:
        raise ConfigError("hedge-backtest needs a sim section")
    if cfg.raw.get("solution"):
        sol, strat = gio.load_solution(cfg.raw["solution"], cap=TREE_CAP)
        cfg = _with_solution(cfg, sol)
        strat = strat or build_hedge(sol)
    else:
        if cfg.scheme is not Scheme.MARTINGALE:
            raise ConfigError("hedge-backtest runs on the martingale scheme")
        sol = _solve(cfg, cfg.n)
        strat = build_hedge(sol)
    rep = simulate_shortfall(strat, sol, cfg.market, cfg.payoff, cfg.sim)
    return _sim_output(cfg, rep, "hedge-backtest")


def cmd_exercise_quality(cfg: RunConfig):
    if cfg.raw.get("solution"):
        sol, _ = gio.load_solution(cfg.raw["solution"], cap=TREE_CAP)
        cfg = _with_solution(cfg, sol)
    else:
        if cfg.scheme is not Scheme.MARTINGALE:
            raise ConfigError("exercise-quality runs on the martingale scheme")
        sol = _solve(cfg, cfg.n)
    rep = evaluate_exercise_quality(sol, cfg.market, cfg.payoff, cfg.sim or SimConfig())
    return _sim_output(cfg, rep, "exercise-quality")


def _with_solution(cfg: RunConfig, sol: GameSolution) -> RunConfig:
    cfg.market, cfg.payoff, cfg.n_list = sol.params, sol.payoff, [sol.n]
    return cfg


def cmd_embed_diagnostics(cfg: RunConfig):
    d = embedding_diagnostics(cfg.market, cfg.n, cfg.sim or SimConfig())
    return Result({"command": "embed-diagnostics", "market": cfg.market.to_dict(), "sim": cfg.sim.__dict__,
            **d.to_dict()})


def cmd_walkgame(cfg: RunConfig):
    w = dict(cfg.raw.get("walkgame") or {})
    pair = wg.make_pair(w.get("pair", "gaussian_bump"), **(w.get("pair_params") or {}))
    T = float(w.get("T", 1.0))
    ns = [int(n) for n in w.get("n_list", [16, 64, 256])]
    law = wg.rademacher()
    rho = law.rho
    rho_rep = {"rho": rho, "source": "exact"}
    if w.get("rho", "exact") == "estimate":
        est = wg.estimate_rho(law, int(w.get("rho_samples", 20_000)), int(w.get("seed", cfg.sim.seed)))
        rho_rep = {"source": "estimate", **est.to_dict(), "rho": est.rho_hat}
        rho = est.rho_hat
    rows = []
    ok = True
    for n in ns:
        v1, v4 = wg.walk_game_value(pair, law, n, T), wg.walk_game_value(pair, law, 4 * n, T)
        b1, b4 = wg.lr_bound(pair, rho, T, n), wg.lr_bound(pair, rho, T, 4 * n)
        holds = abs(v1 - v4) <= b1 + b4
        ok &= holds
        rows.append({"n": n, "V_n": v1, "V_4n": v4, "diff": abs(v1 - v4), "bound_n": b1, "bound_4n": b4,
                     "holds": holds})
    rep = {"command": "walkgame", "pair": pair.name, "pair_params": pair.params, "norms": pair.norms,
           "T": T, "rho": rho_rep, "rows": rows, "all_hold": ok}
    cols = ["n", "V_n", "V_4n", "diff", "bound_n", "bound_4n", "holds"]
    return Result(rep, 0 if ok else 1, (cols, [[r[c] for c in cols] for r in rows]))


def _battery_configs(ocfg: dict) -> list[dict]:
    if "battery" in ocfg:
        return list(ocfg["battery"] or [])
    return [{"payoff": name, **kw} for name, kw in BATTERY]


def _sample_paths(params, n, count, seed):
    rng = np.random.default_rng(seed)
    dist = crr_step_params(params, n)
    return [stock_path_from_signs(params, dist, rng.choice([-1, 1], size=n)) for _ in range(count)]


def run_oracles(market: MarketParams, ocfg: dict) -> dict:
    """Small-n oracle battery: brute force, saddle point, hedge domination, Lipschitz audit."""
    n_max = int(ocfg.get("n_max", 3))
    saddle_n = int(ocfg.get("saddle_n", 6))
    hedge_n = int(ocfg.get("hedge_n", 8))
    perturb = ocfg.get("perturb")
    results = []
    for pc in _battery_configs(ocfg):
        pay = payoff_from_config(pc)
        entry = {"payoff": pay.label, "checks": {}}
        ch = entry["checks"]
        bf_ok = True
        for n in range(1, n_max + 1):
            dist = crr_step_params(market, n)
            price = solve_lattice(build_lattice(market, dist, pay, Engine.TREE)).price
            bf = brute_force_value(market, dist, pay)
            tol = 1e-12 * (1 + abs(price))
            bf_ok &= abs(bf.value - price) <= tol and abs(bf.maxmin - price) <= tol and bf.rule_count == rule_count(n)
        ch["brute_force"] = bool(bf_ok)
        dist = crr_step_params(market, saddle_n)
        sol = solve_lattice(build_lattice(market, dist, pay, Engine.TREE))
        vz = value_against_fixed(market, dist, pay, sol.writer_rule, WRITER_FIXED)
        ve = value_against_fixed(market, dist, pay, sol.holder_rule, HOLDER_FIXED)
        ch["saddle_point"] = bool(max(abs(vz - sol.price), abs(ve - sol.price)) <= 1e-10 * (1 + abs(sol.price)))
        dist = crr_step_params(market, hedge_n)
        sol = solve_lattice(build_lattice(market, dist, pay, Engine.TREE))
        strat = build_hedge(sol)
        if perturb:
            strat = perturbed(strat, int(perturb.get("k", 0)), int(perturb.get("node", 0)), float(perturb.get("bump", 0.5)))
        hr = verify_hedge(strat, market, dist, pay, sol.values)
        ch["hedge_domination"] = bool(hr.passed)
        entry["hedge_report"] = hr.to_dict()
        paths = _sample_paths(market, 6, 6, 0)
        lr = lipschitz_check(pay, paths, np.linspace(0, market.T, 7))
        ch["lipschitz"] = bool(lr.passed)
        entry["passed"] = all(ch.values())
        results.append(entry)
    return {"results": results, "passed": all(e["passed"] for e in results), "count": len(results)}


def cmd_oracle(cfg: RunConfig):
    ocfg = dict(cfg.raw.get("oracle") or {})
    rep = run_oracles(cfg.market, ocfg)
    rep = {"command": "oracle", "market": cfg.market.to_dict(), **rep}
    if not rep["passed"]:
        bad = [e["payoff"] + ": " + ",".join(k for k, v in e["checks"].items() if not v)
               for e in rep["results"] if not e["passed"]]
        print("oracle failures:\n  " + "\n  ".join(bad), file=sys.stderr)
    return Result(rep, 0 if rep["passed"] else 1)


COMMANDS = {
    "price": cmd_price,
    "convergence": cmd_convergence,
    "hedge-backtest": cmd_hedge_backtest,
    "exercise-quality": cmd_exercise_quality,
    "embed-diagnostics": cmd_embed_diagnostics,
    "walkgame": cmd_walkgame,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gameopt", description="Game option lattice pricing, hedging and embedding checks.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", metavar="PATH")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--paths", type=int, metavar="M")
    ap.add_argument("--oversample", type=int, metavar="m")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--scheme", choices=[s.value for s in Scheme])
    ap.add_argument("--engine", choices=[e.value for e in Engine])
    ap.add_argument("--n", type=int)
    ap.add_argument("--out", metavar="PATH")
    ap.add_argument("--format", choices=["csv", "json"])
    ap.add_argument("--allow-big", action="store_true", dest="allow_big")
    ap.add_argument("--solution", metavar="PATH", help="serialized solution to use instead of solving")
    ap.add_argument("--save", metavar="PATH", help="write the solution container (price command)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        res = COMMANDS[args.command](cfg)
    except (ValueError, OSError) as exc:  # ConfigError and model validation errors
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not res.written:
        emit(cfg, res.report, res.table)
    return res.code


if __name__ == "__main__":
    sys.exit(main())
