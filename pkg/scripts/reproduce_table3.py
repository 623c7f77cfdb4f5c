"""Heuristic comparison on the 100x60 area, checked against the published means."""

import argparse
from pathlib import Path

from victimtag import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--full", action="store_true", help="include the 1,000-victim presets")
    ap.add_argument("--iterations", type=int, default=50)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results/table3"))
    args = ap.parse_args()

    presets = tuple(bench.TABLE3_PRESETS) if args.full else bench.DEFAULT_TABLE3
    table = bench.run_table3(presets, iterations=args.iterations, workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    table.write_csv(args.out / "table3.csv")
    table.write_iterations_csv(args.out / "table3_iterations.csv")
    for check in bench.check_table3(table):
        print(check.line())


if __name__ == "__main__":
    main()
