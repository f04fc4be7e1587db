"""Walk-game values under refinement against the explicit error bound.

    python scripts/walkgame_bound.py --rho-samples 100000
"""

from __future__ import annotations

import argparse
import sys

from gameopt import walkgame as wg


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[4, 16, 64, 256, 1024])
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--rho-samples", type=int, default=0, help="estimate rho by simulation (0: exact value)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    law = wg.rademacher()
    rho = law.rho
    if args.rho_samples:
        est = wg.estimate_rho(law, args.rho_samples, args.seed)
        print(f"# rho^2 estimate {est.rho2_hat:.5f} +- {est.rho2_std_error:.5f} (exact {law.rho ** 2:.5f})",
              file=sys.stderr)
        rho = est.rho_hat
    print("pair,n,V_n,V_4n,diff,bound_sum,ratio")
    for name in sorted(wg.PAIRS):
        pair = wg.make_pair(name)
        for n in args.n:
            v1 = wg.walk_game_value(pair, law, n, args.T)
            v4 = wg.walk_game_value(pair, law, 4 * n, args.T)
            b = wg.lr_bound(pair, rho, args.T, n) + wg.lr_bound(pair, rho, args.T, 4 * n)
            print(f"{name},{n},{v1:.10f},{v4:.10f},{abs(v1 - v4):.3e},{b:.3e},{abs(v1 - v4) / b:.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
