"""Experiment presets, published reference values, and table/curve runners."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .domain import RngStream, ScenarioConfig, generate_instance
from .policies import ALL_POLICIES, PolicyKind
from .sim import ExperimentAggregate, run_episode, run_experiment, sample_stats

POLICY_ORDER = tuple(p.value for p in ALL_POLICIES)


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    n: int
    m: int
    width: float = 100.0
    height: float = 60.0
    iterations: int = 50
    seed_base: int = 0
    policies: tuple[str, ...] = POLICY_ORDER

    @property
    def scenario(self) -> ScenarioConfig:
        return ScenarioConfig(self.n, self.m, self.width, self.height)

    @property
    def seeds(self) -> list[int]:
        return list(range(self.seed_base, self.seed_base + self.iterations))


TABLE3_PRESETS: dict[str, ExperimentPreset] = {
    f"E{k}": ExperimentPreset(f"E{k}", n, m)
    for k, (n, m) in enumerate(
        [(5, 10), (5, 20), (5, 100), (5, 1000), (20, 100), (20, 1000), (80, 100), (80, 1000), (320, 1000)],
        start=1,
    )
}

TABLE4_PRESETS: dict[str, ExperimentPreset] = {
    f"R{k}": ExperimentPreset(f"R{k}", n, m, w, h)
    for k, (n, m, w, h) in enumerate(
        [(3, 5, 5, 5), (3, 10, 5, 5), (3, 5, 25, 15), (5, 15, 25, 15), (5, 50, 25, 15), (5, 10, 50, 30), (5, 100, 50, 30), (20, 100, 50, 30)],
        start=1,
    )
}

PRESETS = {**TABLE3_PRESETS, **TABLE4_PRESETS}

# presets whose 1,000-victim runs are only included on request
LARGE_PRESETS = ("E4", "E6", "E8", "E9")
DEFAULT_TABLE3 = tuple(k for k in TABLE3_PRESETS if k not in LARGE_PRESETS)

# published mean steps to tag all victims
PAPER_TABLE3: dict[str, dict[str, float]] = {
    "rvp": dict(E1=136, E2=226, E3=956, E4=9135, E5=299, E6=2381, E7=122, E8=657, E9=231),
    "nvp": dict(E1=124, E2=152, E3=298, E4=1328, E5=164, E6=411, E7=132, E8=218, E9=152),
    "lnvp": dict(E1=118, E2=145, E3=288, E4=1316, E5=153, E6=420, E7=111, E8=190, E9=118),
    "lcvp": dict(E1=115, E2=174, E3=375, E4=1573, E5=197, E6=506, E7=117, E8=258, E9=136),
    "lgap": dict(E1=126, E2=161, E3=317, E4=1383, E5=177, E6=470, E7=148, E8=238, E9=146),
}

# published mean and std per policy, FDQN included
PAPER_TABLE4: dict[str, dict[str, tuple[float, float]]] = {
    "rvp": dict(R1=(15.7, 1.5), R2=(26.7, 1.8), R3=(34.8, 5.2), R4=(57.4, 6.0), R5=(159.9, 8.6), R6=(76.8, 12.0), R7=(525.9, 23.3), R8=(160.1, 8.2)),
    "nvp": dict(R1=(15.4, 1.1), R2=(24.9, 1.5), R3=(35.5, 4.7), R4=(45.8, 3.5), R5=(87.3, 4.9), R6=(69.6, 8.4), R7=(193.3, 12.6), R8=(96.4, 6.1)),
    "lnvp": dict(R1=(15.0, 0.8), R2=(24.4, 1.2), R3=(34.5, 4.3), R4=(45.8, 3.4), R5=(84.8, 4.7), R6=(66.2, 6.4), R7=(188.3, 12.9), R8=(89.0, 3.1)),
    "lcvp": dict(R1=(15.1, 0.9), R2=(25.7, 1.6), R3=(33.8, 5.0), R4=(49.0, 7.1), R5=(103.5, 4.3), R6=(64.6, 7.4), R7=(234.9, 14.0), R8=(114.2, 6.4)),
    "lgap": dict(R1=(18.6, 3.6), R2=(28.9, 4.9), R3=(36.4, 6.8), R4=(52.0, 7.5), R5=(97.4, 10.1), R6=(72.0, 10.0), R7=(212.4, 16.0), R8=(107.4, 8.4)),
    "fdqn": dict(R1=(12.8, 1.3), R2=(20.8, 1.5), R3=(33.6, 4.3), R4=(51.3, 6.5), R5=(148.4, 8.7), R6=(70.0, 9.9), R7=(510.0, 27.3), R8=(153.7, 8.8)),
}

TABLE3_TOLERANCE = 0.15


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and n-1 standard deviation (0 for a single value)."""
    return sample_stats(values)


@dataclass
class ResultCell:
    preset: str
    policy: str
    mean: float
    std: float
    seeds: list[int]
    t_all: list[int]

    @classmethod
    def from_aggregate(cls, preset: str, agg: ExperimentAggregate) -> "ResultCell":
        return cls(preset, agg.policy, agg.mean, agg.std, list(agg.seeds), [int(v) for v in agg.t_all])

    @classmethod
    def from_values(cls, preset: str, policy: str, seeds: Sequence[int], t_all: Sequence[float]) -> "ResultCell":
        mean, std = summarize(t_all)
        return cls(preset, policy, mean, std, [int(s) for s in seeds], [int(v) for v in t_all])


@dataclass
class ResultTable:
    cells: list[ResultCell] = field(default_factory=list)

    def get(self, preset: str, policy: str) -> ResultCell:
        for c in self.cells:
            if c.preset == preset and c.policy == policy:
                return c
        raise KeyError((preset, policy))

    @property
    def presets(self) -> list[str]:
        return list(dict.fromkeys(c.preset for c in self.cells))

    @property
    def policies(self) -> list[str]:
        return list(dict.fromkeys(c.policy for c in self.cells))

    def wide_rows(self) -> tuple[list[str], list[list]]:
        """One row per policy, mean and std columns per preset."""
        header = ["policy"]
        for p in self.presets:
            header += [f"{p}_mean", f"{p}_std"]
        rows = []
        for pol in self.policies:
            row: list = [pol]
            for p in self.presets:
                try:
                    c = self.get(p, pol)
                    row += [round(c.mean, 3), round(c.std, 3)]
                except KeyError:
                    row += ["", ""]
            rows.append(row)
        return header, rows

    def write_csv(self, path) -> None:
        header, rows = self.wide_rows()
        _write(path, header, rows)

    def write_iterations_csv(self, path) -> None:
        rows = [(c.preset, c.policy, s, t) for c in self.cells for s, t in zip(c.seeds, c.t_all)]
        _write(path, ("preset", "policy", "seed", "t_all"), rows)

    def write_json(self, path) -> None:
        doc = [c.__dict__ for c in self.cells]
        Path(path).write_text(json.dumps(doc, indent=2))

    @classmethod
    def read_iterations_csv(cls, path) -> "ResultTable":
        groups: dict[tuple[str, str], list[tuple[int, int]]] = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                groups.setdefault((row["preset"], row["policy"]), []).append((int(row["seed"]), int(row["t_all"])))
        table = cls()
        for (preset, policy), vals in groups.items():
            table.cells.append(ResultCell.from_values(preset, policy, [s for s, _ in vals], [t for _, t in vals]))
        return table


def _write(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def run_table3(
    presets: Iterable[str] = DEFAULT_TABLE3,
    policies: Iterable[str] = POLICY_ORDER,
    iterations: Optional[int] = None,
    seeds: Optional[Sequence[int]] = None,
    workers: int = 1,
) -> ResultTable:
    table = ResultTable()
    for name in presets:
        preset = PRESETS[name]
        its = preset.iterations if iterations is None else iterations
        for pol in policies:
            agg = run_experiment(preset.scenario, pol, its, preset.seed_base, seeds=seeds, workers=workers)
            table.cells.append(ResultCell.from_aggregate(name, agg))
    return table


@dataclass
class ToleranceCheck:
    preset: str
    policy: str
    measured: float
    reference: float
    tolerance: float

    @property
    def rel_error(self) -> float:
        return (self.measured - self.reference) / self.reference

    @property
    def ok(self) -> bool:
        return abs(self.rel_error) <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.preset} {self.policy}: {self.measured:.1f} vs {self.reference:g} ({self.rel_error:+.1%})"


def check_table3(table: ResultTable, tolerance: float = TABLE3_TOLERANCE) -> list[ToleranceCheck]:
    return [
        ToleranceCheck(c.preset, c.policy, c.mean, PAPER_TABLE3[c.policy][c.preset], tolerance)
        for c in table.cells
        if c.preset in PAPER_TABLE3.get(c.policy, {})
    ]


class MissingCheckpointError(FileNotFoundError):
    pass


def find_checkpoint(directory, preset: str) -> Path:
    """Latest checkpoint under ``directory/<preset>/`` or a file named ``<preset>.npz``."""
    directory = Path(directory)
    direct = directory / f"{preset}.npz"
    if direct.exists():
        return direct
    sub = directory / preset
    found = sorted(sub.glob("checkpoint_ep*.npz"), key=lambda p: int(p.stem.split("ep")[-1])) if sub.is_dir() else []
    if not found:
        raise MissingCheckpointError(f"no checkpoint for {preset} in {directory}")
    return found[-1]


def run_table4(
    presets: Iterable[str] = tuple(TABLE4_PRESETS),
    checkpoints: Optional[Path | str] = None,
    policies: Iterable[str] = POLICY_ORDER,
    iterations: Optional[int] = None,
) -> ResultTable:
    """Heuristic rows by simulation; an FDQN row per preset when a checkpoint directory is given."""
    from .train import evaluate, load_checkpoint

    table = ResultTable()
    for name in presets:
        preset = TABLE4_PRESETS[name]
        its = preset.iterations if iterations is None else iterations
        for pol in policies:
            agg = run_experiment(preset.scenario, pol, its, preset.seed_base)
            table.cells.append(ResultCell.from_aggregate(name, agg))
        if checkpoints is not None:
            ck = load_checkpoint(find_checkpoint(checkpoints, name))
            ev = evaluate(ck.params, preset.scenario, its, ck.config.bins, preset.seed_base, zeta=ck.config.zeta, step_cap=ck.config.step_cap)
            if ev.failures:
                raise RuntimeError(f"{name}: greedy policy hit the step cap on seeds {ev.failures}")
            table.cells.append(ResultCell.from_values(name, "fdqn", ev.seeds, ev.t_all))
    return table


def emit_curves(preset: str, policies: Iterable[str] = POLICY_ORDER, out_dir: Path | str = "results", iterations: Optional[int] = None) -> list[Path]:
    """Mean tagged-vs-time curve per policy plus one representative state timeline each."""
    p = PRESETS[preset]
    its = p.iterations if iterations is None else iterations
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for pol in policies:
        agg = run_experiment(p.scenario, pol, its, p.seed_base)
        curve = out / f"{preset}_{pol}_tagged_curve.csv"
        agg.write_curve_csv(curve)
        instance = generate_instance(p.scenario, RngStream(p.seed_base))
        timeline = out / f"{preset}_{pol}_timeline.csv"
        run_episode(instance, PolicyKind(pol).value, p.seed_base).write_timeline_csv(timeline)
        written += [curve, timeline]
    return written


def ordering_holds(table: ResultTable, preset: str, order: Sequence[str]) -> bool:
    """True when means strictly increase along ``order``."""
    means = [table.get(preset, pol).mean for pol in order]
    return all(a < b for a, b in zip(means, means[1:]))


def paired_difference(table: ResultTable, preset: str, a: str, b: str) -> tuple[float, float]:
    """Mean and standard error of per-seed differences b - a."""
    ca, cb = table.get(preset, a), table.get(preset, b)
    if ca.seeds != cb.seeds:
        raise ValueError("cells were run on different seeds")
    diff = np.asarray(cb.t_all, float) - np.asarray(ca.t_all, float)
    mean, std = summarize(diff)
    return mean, std / np.sqrt(len(diff))
