"""Command-line entry point: ``victimtag <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from .domain import Instance, RngStream, ScenarioConfig, generate_instance


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_table3(args) -> int:
    presets = args.presets or (tuple(bench.TABLE3_PRESETS) if args.full else bench.DEFAULT_TABLE3)
    table = bench.run_table3(presets, args.policies or bench.POLICY_ORDER, args.iterations, workers=args.workers)
    out = _out_dir(args.out)
    table.write_csv(out / "table3.csv")
    table.write_iterations_csv(out / "table3_iterations.csv")
    table.write_json(out / "table3.json")
    header, rows = table.wide_rows()
    print(",".join(header))
    for row in rows:
        print(",".join(str(v) for v in row))
    if args.check:
        checks = bench.check_table3(table)
        for c in checks:
            print(c.line())
        if not all(c.ok for c in checks):
            return 1
    return 0


def cmd_table4(args) -> int:
    presets = args.presets or tuple(bench.TABLE4_PRESETS)
    try:
        table = bench.run_table4(presets, args.checkpoints, args.policies or bench.POLICY_ORDER, args.iterations)
    except bench.MissingCheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(args.out)
    table.write_csv(out / "table4.csv")
    table.write_iterations_csv(out / "table4_iterations.csv")
    table.write_json(out / "table4.json")
    for c in table.cells:
        print(f"{c.preset} {c.policy}: {c.mean:.1f} +/- {c.std:.1f}")
    return 0


def cmd_curves(args) -> int:
    for path in bench.emit_curves(args.preset, args.policies or bench.POLICY_ORDER, args.out, args.iterations):
        print(path)
    return 0


def cmd_solve_exact(args) -> int:
    from .exact import SizeLimitError, SolveTimeout, build_ilp_text, solve_exact

    instance = Instance.from_json(args.instance)
    if args.lp:
        Path(args.lp).write_text(build_ilp_text(instance))
    try:
        sol = solve_exact(instance, args.max_victims, args.time_limit)
    except SizeLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolveTimeout as exc:
        print(f"error: {exc}; best incumbent makespan {exc.incumbent.makespan:.4f}", file=sys.stderr)
        if args.out:
            exc.incumbent.to_json(args.out)
        return 3
    text = sol.to_json(args.out)
    print(text)
    return 0


def cmd_simulate(args) -> int:
    from .sim import run_episode

    if args.instance:
        instance = Instance.from_json(args.instance)
    else:
        config = ScenarioConfig(args.n, args.m, args.width, args.height)
        instance = generate_instance(config, RngStream(args.seed))
    result = run_episode(instance, args.policy, args.seed)
    if args.out:
        out = _out_dir(args.out)
        stem = f"{args.policy}_seed{args.seed}"
        result.write_series_csv(out / f"{stem}_tagged.csv")
        result.write_timeline_csv(out / f"{stem}_timeline.csv")
        (out / f"{stem}_summary.json").write_text(json.dumps(result.summary(), indent=2))
    print(json.dumps(result.summary()))
    return 0


def cmd_generate(args) -> int:
    config = ScenarioConfig(args.n, args.m, args.width, args.height)
    text = generate_instance(config, RngStream(args.seed)).to_json(args.out)
    if not args.out:
        print(text)
    return 0


def cmd_train(args) -> int:
    from .train import TRAIN_PRESETS, TrainConfig, evaluate, save_checkpoint, train

    if args.config:
        config = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        config = TRAIN_PRESETS[args.preset]
    changes = {k: v for k, v in (("episodes", args.episodes), ("seed", args.seed)) if v is not None}
    config = config.replace(**changes)
    out = _out_dir(args.out)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2))

    def progress(done, curves):
        if done % args.log_every == 0:
            window = curves.steps[-args.log_every:]
            logging.info("episode %d: mean steps %.2f", done, sum(window) / len(window))

    result = train(config, out, progress)
    result.curves.write_csv(out / "curves.csv")
    final = save_checkpoint(out / "final.npz", result.params, result.target, result.optimizer, config, config.episodes, result.env_steps)
    ev = evaluate(result.params, config.scenario, args.eval_iterations, config.bins, zeta=config.zeta, step_cap=config.step_cap)
    (out / "evaluation.json").write_text(json.dumps(ev.summary(), indent=2))
    print(f"saved {final}; greedy evaluation {ev.mean:.2f} +/- {ev.std:.2f} over {len(ev.seeds)} episodes")
    return 0


def cmd_evaluate(args) -> int:
    from .train import evaluate, load_checkpoint

    ck = load_checkpoint(args.checkpoint)
    scenario = ck.config.scenario
    ev = evaluate(ck.params, scenario, args.iterations, ck.config.bins, args.seed_base, zeta=ck.config.zeta, step_cap=ck.config.step_cap)
    print(json.dumps({k: v for k, v in ev.summary().items() if k != "t_all"}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="victimtag", description="Victim tagging heuristics, exact solver and factorized Q-learning.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="reproduce result tables and curves")
    bsub = b.add_subparsers(dest="bench_command", required=True)
    t3 = bsub.add_parser("table3", help="heuristic comparison on the 100x60 area")
    t3.add_argument("--full", action="store_true", help="include the 1,000-victim presets")
    t3.add_argument("--check", action="store_true", help="exit nonzero if any mean is outside tolerance")
    t3.add_argument("--presets", nargs="+", choices=list(bench.TABLE3_PRESETS))
    t3.add_argument("--policies", nargs="+", choices=bench.POLICY_ORDER)
    t3.add_argument("--iterations", type=int)
    t3.add_argument("--workers", type=int, default=1)
    t3.add_argument("--out", default="results")
    t3.set_defaults(func=cmd_table3)
    t4 = bsub.add_parser("table4", help="heuristics and trained policies on the learning presets")
    t4.add_argument("--checkpoints", help="directory with <preset>.npz or <preset>/checkpoint_ep*.npz")
    t4.add_argument("--presets", nargs="+", choices=list(bench.TABLE4_PRESETS))
    t4.add_argument("--policies", nargs="+", choices=bench.POLICY_ORDER)
    t4.add_argument("--iterations", type=int)
    t4.add_argument("--out", default="results")
    t4.set_defaults(func=cmd_table4)
    cv = bsub.add_parser("curves", help="tagged-over-time and state timeline series")
    cv.add_argument("--preset", required=True, choices=list(bench.PRESETS))
    cv.add_argument("--policies", nargs="+", choices=bench.POLICY_ORDER)
    cv.add_argument("--iterations", type=int)
    cv.add_argument("--out", default="results")
    cv.set_defaults(func=cmd_curves)

    se = sub.add_parser("solve-exact", help="optimal min-max routes for a small instance")
    se.add_argument("--instance", required=True)
    se.add_argument("--out", help="solution JSON path")
    se.add_argument("--lp", help="also write the model in LP format")
    se.add_argument("--max-victims", type=int, default=9)
    se.add_argument("--time-limit", type=float)
    se.set_defaults(func=cmd_solve_exact)

    sm = sub.add_parser("simulate", help="run one heuristic episode")
    sm.add_argument("--policy", required=True, choices=bench.POLICY_ORDER)
    sm.add_argument("--n", type=int, default=5)
    sm.add_argument("--m", type=int, default=10)
    sm.add_argument("--width", type=float, default=100.0)
    sm.add_argument("--height", type=float, default=60.0)
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--instance", help="instance JSON instead of a generated one")
    sm.add_argument("--out", help="directory for CSV traces")
    sm.set_defaults(func=cmd_simulate)

    gen = sub.add_parser("generate", help="write a random instance as JSON")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--m", type=int, required=True)
    gen.add_argument("--width", type=float, default=100.0)
    gen.add_argument("--height", type=float, default=60.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train a factorized Q-network")
    src = tr.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=[f"R{k}" for k in range(1, 9)])
    src.add_argument("--config", help="JSON file with TrainConfig fields")
    tr.add_argument("--episodes", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--eval-iterations", type=int, default=50)
    tr.add_argument("--log-every", type=int, default=500)
    tr.add_argument("--out", default="runs/train")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="greedy evaluation of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--iterations", type=int, default=50)
    ev.add_argument("--seed-base", type=int, default=0)
    ev.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
