"""Federated (6 workers x 25 graphs) vs standalone hybrid, per seed.

    python3 scripts/federated.py --out results/federated.csv [--rounds 150]
"""

import argparse
import csv
import sys

from covertnet import protocol as P


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="-")
    ap.add_argument("--seeds", type=int, nargs="+", default=list(P.SEEDS))
    ap.add_argument("--rounds", type=int, default=150)
    args = ap.parse_args()

    ds = P.baseline_dataset()
    rows = []
    for seed in args.seeds:
        r = P.run_seed(ds, seed, ("hybrid",), federated=True, sweep_model=None, rounds=args.rounds)
        rows.append({
            "seed": seed,
            "standalone_mae": r.test_mae["hybrid"],
            "standalone_medae": r.test_medae["hybrid"],
            "fl_mae": r.fed_test_mae,
            "fl_medae": r.fed_test_medae,
            "medae_ratio": r.fed_test_medae / r.test_medae["hybrid"],
        })
        print(f"seed {seed}: MedAE ratio {rows[-1]['medae_ratio']:.3f}", file=sys.stderr)
    mean = {k: sum(r[k] for r in rows) / len(rows) for k in rows[0] if k != "seed"}
    mean["medae_ratio"] = mean["fl_medae"] / mean["standalone_medae"]
    rows.append({"seed": "mean", **mean})
    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.DictWriter(out, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)


if __name__ == "__main__":
    main()
