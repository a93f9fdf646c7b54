"""Test MAE of the trained standalone hybrid model over pruning levels, seed-averaged.

    python3 scripts/sparsity_sweep.py --out results/sweep.csv
"""

import argparse
import csv
import sys

from covertnet import protocol as P


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="-")
    ap.add_argument("--seeds", type=int, nargs="+", default=list(P.SEEDS))
    ap.add_argument("--model", default="hybrid")
    args = ap.parse_args()

    ds = P.baseline_dataset()
    runs = [P.run_seed(ds, s, (args.model,), federated=False, sweep_model=args.model) for s in args.seeds]
    base = P.mean_over(runs, lambda r: r.sweep[0][1])
    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.writer(out)
    w.writerow(["rho", "test_mae", "ratio_to_dense"])
    for i, rho in enumerate(P.SWEEP_LEVELS):
        m = P.mean_over(runs, lambda r: r.sweep[i][1])
        w.writerow([rho, m, m / base])


if __name__ == "__main__":
    main()
