"""Rank methods per scenario from an AUC matrix and print average ranks.

Input is a CSV with ``method,scenario,value,rank`` columns; rows whose
scenario is ``AVERAGE`` are ignored. Defaults to the bundled MNIST and
Fashion-MNIST benchmark matrix.
"""

import argparse
import csv
import sys
from pathlib import Path

from drbfdd.evalkit import rank_table, rank_table_to_csv

DEFAULT = Path(__file__).resolve().parents[1] / "benchmarks" / "mnist_fashion_auc.csv"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("matrix", nargs="?", type=Path, default=DEFAULT)
    ap.add_argument("--csv", action="store_true", help="emit the full rank table as CSV")
    args = ap.parse_args()

    results = {}
    with open(args.matrix) as fh:
        for row in csv.DictReader(fh):
            if row["scenario"] != "AVERAGE":
                results.setdefault(row["method"], {})[row["scenario"]] = float(row["value"])
    table = rank_table(results)
    if args.csv:
        sys.stdout.write(rank_table_to_csv(table))
        return
    for i in sorted(range(len(table.methods)), key=lambda i: table.average_rank[i]):
        print(f"{table.methods[i]:<20} {table.average_rank[i]:5.2f}")


if __name__ == "__main__":
    main()
