"""Solver robustness over an (alpha, n) grid.

Writes the cost-map CSV and prints one line per cell.  The defaults run
the 3x3 corner slice with 8 repetitions; ``--full`` switches to the
400-pair lists with 64 repetitions.

    python scripts/cost_map.py --out results/costmap_phi1.csv
    python scripts/cost_map.py --preset phi2 --cells 64 --dt 1/128
"""

import argparse
from fractions import Fraction

from richards_mlmc.bench import DEFAULT_ALPHAS, DEFAULT_NS, cost_map, write_cost_map_csv
from richards_mlmc.randfield import PRESETS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="phi1", choices=sorted(PRESETS))
    ap.add_argument("--cells", type=int, default=32)
    ap.add_argument("--dt", type=Fraction, default=Fraction(1, 64))
    ap.add_argument("--reps", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--full", action="store_true", help="400 pairs, 64 repetitions")
    ap.add_argument("--out", default="costmap.csv")
    args = ap.parse_args()

    alphas, ns, reps = [0.2, 2.0, 4.0], [1.2, 2.0, 4.0], args.reps
    if args.full:
        alphas, ns, reps = DEFAULT_ALPHAS, DEFAULT_NS, 64
    cells = cost_map(alphas, ns, reps, args.cells, float(args.dt), PRESETS[args.preset],
                     args.seed, threads=args.threads)
    write_cost_map_csv(args.out, cells)
    for c in cells:
        flag = f"  failures {c.failures}/{c.reps}" if c.flagged else ""
        print(f"alpha={c.alpha:4.2f} n={c.n:4.2f}  cycles {c.mean_cycles:8.1f} "
              f"+- {c.std_cycles:6.1f}{flag}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
