"""Seed-averaged standalone test MAE for the model zoo on the baseline protocol.

    python3 scripts/table_ordering.py --out results/ordering.csv [--seeds 0 1 2 3 4] [--epochs 1000]
"""

import argparse
import csv
import sys

from covertnet import protocol as P
from covertnet.metrics import relative_reduction


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="-")
    ap.add_argument("--seeds", type=int, nargs="+", default=list(P.SEEDS))
    ap.add_argument("--epochs", type=int, default=1000)
    ap.add_argument("--models", nargs="+", default=["mlp", "gcn1", "gcn2", "gcn3", "hybrid"])
    args = ap.parse_args()

    ds = P.baseline_dataset()
    runs = []
    for seed in args.seeds:
        runs.append(P.run_seed(ds, seed, args.models, federated=False, sweep_model=None, epochs=args.epochs))
        print(f"seed {seed}: " + ", ".join(f"{k} {v:.3f}" for k, v in runs[-1].test_mae.items()), file=sys.stderr)

    worst = max(P.mean_over(runs, lambda r, m=m: r.test_mae[m]) for m in args.models)
    rows = []
    for m in args.models:
        mae = P.mean_over(runs, lambda r: r.test_mae[m])
        rows.append({
            "model": m,
            "test_mae": mae,
            "test_medae": P.mean_over(runs, lambda r: r.test_medae[m]),
            "reduction_vs_worst_pct": relative_reduction(mae, worst),
        })
    rows.sort(key=lambda r: r["test_mae"])
    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.DictWriter(out, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)


if __name__ == "__main__":
    main()
