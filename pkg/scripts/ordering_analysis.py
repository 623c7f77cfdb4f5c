"""Paired comparison of LNVP, NVP and RVP on shared seeds, with standard errors."""

import argparse

from victimtag import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--presets", nargs="+", default=["E1", "E2", "E3"])
    ap.add_argument("--seeds", type=int, default=400)
    args = ap.parse_args()

    order = ["lnvp", "nvp", "rvp"]
    table = bench.run_table3(args.presets, order, seeds=range(args.seeds))
    for preset in args.presets:
        means = "  ".join(f"{p} {table.get(preset, p).mean:7.1f}" for p in order)
        gap, se = bench.paired_difference(table, preset, "lnvp", "nvp")
        rvp_gap, rvp_se = bench.paired_difference(table, preset, "nvp", "rvp")
        print(f"{preset}: {means}   NVP-LNVP {gap:+.2f} (se {se:.2f})   RVP-NVP {rvp_gap:+.2f} (se {rvp_se:.2f})")


if __name__ == "__main__":
    main()
