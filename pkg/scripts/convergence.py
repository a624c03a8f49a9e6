"""Discretization error of coupled samples under grid refinement.

Prints ``||p_l - p_{l-1}||`` per level and the fitted rate for one or more
baseline pairs, and writes one CSV per pair.

    python scripts/convergence.py --baseline 1.0,2.0 --baseline 2.0,2.0
"""

import argparse

from richards_mlmc.bench import convergence_study, write_convergence_csv
from richards_mlmc.randfield import PRESETS
from richards_mlmc.uq import SampleSetup


def pair(text):
    a, n = (float(t) for t in text.split(","))
    return a, n


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--baseline", type=pair, action="append",
                    help="alpha,n (repeatable; default 1.0,2.0)")
    ap.add_argument("--preset", default="phi1", choices=sorted(PRESETS))
    ap.add_argument("--coarsest", type=int, default=8)
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--samples", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--prefix", default="convergence")
    args = ap.parse_args()

    setup = SampleSetup(matern=PRESETS[args.preset])
    for a, n in args.baseline or [(1.0, 2.0)]:
        res = convergence_study(args.coarsest, args.levels, a, n, args.samples, args.seed,
                                setup, args.threads)
        path = f"{args.prefix}_a{a:g}_n{n:g}.csv"
        write_convergence_csv(path, res)
        diffs = "  ".join(f"1/{round(1 / h)}: {d:.3e}" for h, d in zip(res.h[1:], res.diff_norms[1:]))
        print(f"alpha={a:g} n={n:g}  {diffs}  rate {res.rate:.2f}  "
              f"(replaced failures {res.failures})  -> {path}")


if __name__ == "__main__":
    main()
