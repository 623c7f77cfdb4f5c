"""Train a preset on several seeds, save checkpoints, and compare greedy evaluation with the heuristics."""

import argparse
import json
from pathlib import Path

from victimtag.sim import run_experiment
from victimtag.train import TRAIN_PRESETS, evaluate, save_checkpoint, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="R1", choices=sorted(TRAIN_PRESETS))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--episodes", type=int)
    ap.add_argument("--out", type=Path, default=Path("runs"))
    args = ap.parse_args()

    base = TRAIN_PRESETS[args.preset]
    if args.episodes is not None:
        base = base.replace(episodes=args.episodes)
    summary = {}
    for seed in args.seeds:
        cfg = base.replace(seed=seed)
        run_dir = args.out / args.preset / f"seed{seed}"
        res = train(cfg, run_dir)
        res.curves.write_csv(run_dir / "curves.csv")
        save_checkpoint(run_dir / "final.npz", res.params, res.target, res.optimizer, cfg, cfg.episodes, res.env_steps)
        ev = evaluate(res.params, cfg.scenario, 50, cfg.bins, zeta=cfg.zeta, step_cap=cfg.step_cap)
        summary[f"seed{seed}"] = {"mean": ev.mean, "std": ev.std, "failures": ev.failures, "train_seconds": sum(res.curves.seconds)}
        print(f"seed {seed}: greedy {ev.mean:.2f} +/- {ev.std:.2f}  ({sum(res.curves.seconds):.0f} s)")
    for pol in ("rvp", "nvp", "lnvp", "lcvp", "lgap"):
        agg = run_experiment(base.scenario, pol, 50)
        summary[pol] = {"mean": agg.mean, "std": agg.std}
        print(f"{pol:5s}: {agg.mean:.2f} +/- {agg.std:.2f}")
    (args.out / args.preset / "summary.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
