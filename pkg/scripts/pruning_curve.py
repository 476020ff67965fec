"""Print the cost-complexity pruning curve written by the prune stage.

    python scripts/pruning_curve.py bench-out/pruning.csv
"""

import argparse
import csv


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("pruning_csv")
    p.add_argument("--width", type=int, default=40, help="bar width for accuracy")
    args = p.parse_args()

    with open(args.pruning_csv, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    best = max(rows, key=lambda r: (float(r["val_acc"]), -int(r["node_count"])))
    print(f"{'ccp_alpha':>12} {'nodes':>6} {'train':>7} {'val':>7} {'test':>7}")
    for r in rows:
        test = float(r["test_acc"])
        bar = "#" * round(test * args.width)
        mark = " <- selected" if r is best else ""
        print(f"{float(r['ccp_alpha']):12.4g} {int(r['node_count']):6d} {float(r['train_acc']):7.4f} "
              f"{float(r['val_acc']):7.4f} {test:7.4f} {bar}{mark}")


if __name__ == "__main__":
    main()
