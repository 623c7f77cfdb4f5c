"""Optimality gap of each heuristic against the exact min-max makespan on small instances."""

import argparse

import numpy as np

from victimtag import bench
from victimtag.domain import RngStream, ScenarioConfig, generate_instance
from victimtag.exact import solve_exact
from victimtag.sim import run_episode


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=3)
    ap.add_argument("--m", type=int, default=7)
    ap.add_argument("--width", type=float, default=30.0)
    ap.add_argument("--height", type=float, default=20.0)
    ap.add_argument("--instances", type=int, default=50)
    args = ap.parse_args()

    config = ScenarioConfig(args.n, args.m, args.width, args.height)
    ratios = {p: [] for p in bench.POLICY_ORDER}
    for seed in range(args.instances):
        inst = generate_instance(config, RngStream(seed))
        best = solve_exact(inst).makespan
        for pol in bench.POLICY_ORDER:
            ratios[pol].append(run_episode(inst, pol, seed).t_all / best)
    for pol, r in ratios.items():
        print(f"{pol:5s} simulated/optimal: mean {np.mean(r):.3f}  max {np.max(r):.3f}")


if __name__ == "__main__":
    main()
