"""Discrete-time agent-based engine for the tagging scenario.

Each step the scheduler activates responders in a random order. An activation
performs exactly one finite-state-machine action: a selection, one movement
increment, or one tag tick.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .domain import FSMState, Instance, RngStream, ScenarioConfig, TriageColor, generate_instance, start_color
from .policies import Policy, PolicyKind, select

log = logging.getLogger(__name__)

IDLE, SELECT, MOVE, TAG = (int(s) for s in FSMState)


class StepCapExceeded(RuntimeError):
    pass


class WorldState:
    """Mutable runtime state layered over an immutable instance."""

    def __init__(self, instance: Instance, zeta: float = 1.0):
        self.instance = instance
        self.zeta = float(zeta)
        n, m = instance.n, instance.m
        self.victim_pos = instance.victim_pos
        self.speed = instance.speed
        self.tag_time = instance.tag_time
        self.critical = instance.health < 0.5
        self.pos = np.tile(np.asarray(instance.start, float), (n, 1))
        self.state = np.full(n, IDLE, dtype=np.int64)
        self.claim = np.full(n, -1, dtype=np.int64)
        self.timer = np.zeros(n, dtype=np.int64)
        self.tagged = np.zeros(m, dtype=bool)
        self.claimant = np.full(m, -1, dtype=np.int64)
        self.tagged_by = np.full(m, -1, dtype=np.int64)
        self.color = np.full(m, TriageColor.UNTAGGED, dtype=np.int64)
        self.t = 0
        self.tagged_series = [0]
        self.timeline: list[np.ndarray] = []
        self.routes: list[list[int]] = [[] for _ in range(n)]
        self.preemptions: list[tuple[int, int, int, float, float]] = []

    @property
    def n(self) -> int:
        return len(self.pos)

    @property
    def m(self) -> int:
        return len(self.tagged)

    @property
    def n_tagged(self) -> int:
        return int(self.tagged.sum())

    @property
    def done(self) -> bool:
        return bool(self.tagged.all())

    def dist(self, i: int, k: int) -> float:
        d = self.victim_pos[k] - self.pos[i]
        return float(np.sqrt(d @ d))

    def available(self) -> np.ndarray:
        return ~self.tagged & (self.claimant < 0)

    def copy(self) -> "WorldState":
        other = WorldState.__new__(WorldState)
        other.__dict__.update(self.__dict__)
        for name in ("pos", "state", "claim", "timer", "tagged", "claimant", "tagged_by", "color"):
            setattr(other, name, getattr(self, name).copy())
        other.tagged_series = list(self.tagged_series)
        other.timeline = list(self.timeline)
        other.routes = [list(r) for r in self.routes]
        other.preemptions = list(self.preemptions)
        return other


# primitive FSM actions, shared with the learning environment


def apply_select(world: WorldState, i: int, k: int) -> None:
    prev = world.claimant[k]
    if prev >= 0 and prev != i:
        d_prev = world.dist(prev, k)
        d_new = world.dist(i, k)
        # preemption is only legal under the local-nearest rule
        assert d_prev > d_new and d_prev > world.zeta, (prev, i, k, d_prev, d_new)
        world.preemptions.append((world.t, i, int(prev), d_prev, d_new))
        world.claim[prev] = -1
        world.state[prev] = SELECT
    world.claimant[k] = i
    world.claim[i] = k
    world.state[i] = MOVE


def apply_idle(world: WorldState, i: int) -> None:
    if world.state[i] == SELECT:
        world.state[i] = IDLE


def apply_move(world: WorldState, i: int) -> None:
    advance(world, [i])


def apply_tag(world: WorldState, i: int) -> bool:
    """One tag tick (entering the tag state if needed); True when the victim becomes tagged."""
    before = world.n_tagged
    if world.state[i] == MOVE:
        world.state[i] = TAG
        world.timer[i] = world.tag_time[i]
    world.timer[i] -= 1
    if world.timer[i] == 0:
        _complete_tag(world, i)
    return world.n_tagged > before


def _complete_tag(world: WorldState, i: int) -> None:
    k = world.claim[i]
    world.tagged[k] = True
    world.tagged_by[k] = i
    world.color[k] = start_color(float(world.instance.health[k]))
    world.claimant[k] = -1
    world.claim[i] = -1
    world.routes[i].append(int(k))
    world.state[i] = SELECT


def advance(world: WorldState, agents) -> list[int]:
    """Apply the move-or-tag activation of every listed agent, in list order.

    Agents must be in the move or tag state. Movement and tag ticks never
    interact, so the batch is equivalent to activating the agents one by one.
    Returns the agents that completed a tag.
    """
    idx = np.asarray(agents, dtype=np.int64)
    if len(idx) == 0:
        return []
    k = world.claim[idx]
    delta = world.victim_pos[k] - world.pos[idx]
    d = np.sqrt(delta[:, 0] * delta[:, 0] + delta[:, 1] * delta[:, 1])
    moving = world.state[idx] == MOVE
    walk = moving & (d >= world.zeta)
    if walk.any():
        wi = idx[walk]
        sp = world.speed[wi]
        dw = d[walk]
        arrive = dw <= sp
        scale = np.where(arrive, 1.0, sp / np.where(dw > 0, dw, 1.0))
        world.pos[wi] = np.where(arrive[:, None], world.victim_pos[k[walk]], world.pos[wi] + delta[walk] * scale[:, None])
    ticking = ~walk
    if not ticking.any():
        return []
    ti = idx[ticking]
    begin = world.state[ti] == MOVE
    if begin.any():
        world.state[ti[begin]] = TAG
        world.timer[ti[begin]] = world.tag_time[ti[begin]]
    world.timer[ti] -= 1
    finished = [int(i) for i in ti[world.timer[ti] == 0]]
    for i in finished:
        _complete_tag(world, i)
    return finished


def fsm_transition(world: WorldState, i: int, policy: Policy, rng: Optional[np.random.Generator] = None) -> None:
    """Run one activation of responder i."""
    s = world.state[i]
    if s == IDLE or s == SELECT:
        if world.tagged.all():
            world.state[i] = IDLE
            return
        k = select(i, world, policy, rng)
        if k is None:
            world.state[i] = IDLE
        else:
            apply_select(world, i, k)
    else:
        advance(world, [i])


def end_step(world: WorldState) -> None:
    if world.tagged.all():
        world.state[:] = IDLE
    world.t += 1
    world.tagged_series.append(world.n_tagged)
    world.timeline.append(world.state.copy())


def step(world: WorldState, policy: Policy, rng: RngStream) -> WorldState:
    """Activate every responder once in a random order, then advance the clock.

    Consecutive move/tag activations are batched; a selection flushes the batch
    first so it sees every earlier activation of the step.
    """
    order = rng.scheduler.permutation(world.n)
    state = world.state
    pending: list[int] = []
    for i in order:
        if state[i] >= MOVE:
            pending.append(i)
            continue
        if pending:
            advance(world, pending)
            pending = []
        fsm_transition(world, int(i), policy, rng.policy)
    if pending:
        advance(world, pending)
    end_step(world)
    return world


@dataclass
class EpisodeResult:
    t_all: int
    tagged_series: np.ndarray  # value after each step, index 0 is t=0
    timeline: np.ndarray  # (t_all, n) FSM states after each step
    tags_per_responder: np.ndarray
    routes: list[list[int]]
    colors: np.ndarray
    tagged_by: np.ndarray
    preemptions: int = 0

    def series_rows(self):
        return [(t, int(c)) for t, c in enumerate(self.tagged_series)]

    def timeline_rows(self):
        return [
            (t + 1, i, FSMState(int(s)).name.lower())
            for t, row in enumerate(self.timeline)
            for i, s in enumerate(row)
        ]

    def write_series_csv(self, path) -> None:
        _write_csv(path, ("t", "tagged_count"), self.series_rows())

    def write_timeline_csv(self, path) -> None:
        _write_csv(path, ("t", "responder_id", "psi"), self.timeline_rows())

    def summary(self) -> dict:
        return {
            "t_all": self.t_all,
            "tags_per_responder": self.tags_per_responder.tolist(),
            "routes": self.routes,
            "preemptions": self.preemptions,
        }

    def __eq__(self, other):
        if not isinstance(other, EpisodeResult):
            return NotImplemented
        return (
            self.t_all == other.t_all
            and np.array_equal(self.tagged_series, other.tagged_series)
            and np.array_equal(self.timeline, other.timeline)
            and self.routes == other.routes
            and np.array_equal(self.tagged_by, other.tagged_by)
        )


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def default_step_cap(instance: Instance) -> int:
    return int(np.ceil(10 * max(instance.m, 1) * (instance.width + instance.height) / instance.speed.min()))


def run_episode(
    instance: Instance,
    policy: Policy | str,
    seed: int = 0,
    step_cap: Optional[int] = None,
) -> EpisodeResult:
    if not isinstance(policy, Policy):
        policy = Policy(PolicyKind(policy))
    policy = policy.for_instance(instance)
    rng = RngStream(seed)
    world = WorldState(instance, policy.zeta)
    cap = default_step_cap(instance) if step_cap is None else step_cap
    while not world.done:
        if world.t >= cap:
            raise StepCapExceeded(f"{policy.kind.value} did not finish within {cap} steps")
        step(world, policy, rng)
    return episode_result(world)


def episode_result(world: WorldState) -> EpisodeResult:
    timeline = np.array(world.timeline, dtype=np.int64).reshape(-1, world.n)
    return EpisodeResult(
        t_all=world.t,
        tagged_series=np.array(world.tagged_series, dtype=np.int64),
        timeline=timeline,
        tags_per_responder=np.bincount(world.tagged_by[world.tagged_by >= 0], minlength=world.n),
        routes=[list(r) for r in world.routes],
        colors=world.color.copy(),
        tagged_by=world.tagged_by.copy(),
        preemptions=len(world.preemptions),
    )


@dataclass
class ExperimentAggregate:
    policy: str
    seeds: list[int]
    t_all: np.ndarray
    mean: float
    std: float
    mean_curve: np.ndarray = field(repr=False)
    episodes: list[EpisodeResult] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "policy": self.policy,
            "mean": self.mean,
            "std": self.std,
            "iterations": len(self.seeds),
            "seeds": self.seeds,
            "t_all": self.t_all.tolist(),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2))

    def write_curve_csv(self, path) -> None:
        _write_csv(path, ("t", "tagged_count"), [(t, float(c)) for t, c in enumerate(self.mean_curve)])


def sample_stats(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and n-1 standard deviation; a single value has std 0."""
    x = np.asarray(values, float)
    if len(x) == 0:
        raise ValueError("no values to summarize")
    if len(x) == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(x.std(ddof=1))


def mean_curve(series: Sequence[np.ndarray]) -> np.ndarray:
    """Average tagged-count curves, holding each finished run at its final value."""
    length = max(len(s) for s in series)
    padded = np.array([np.pad(s, (0, length - len(s)), mode="edge") for s in series], float)
    return padded.mean(axis=0)


def _run_one(args):
    config, policy, seed = args
    instance = generate_instance(config, RngStream(seed))
    return run_episode(instance, policy, seed)


def run_experiment(
    config: ScenarioConfig,
    policy: Policy | str,
    iterations: int = 50,
    seed_base: int = 0,
    seeds: Optional[Sequence[int]] = None,
    workers: int = 1,
    keep_episodes: bool = False,
) -> ExperimentAggregate:
    """Repeat seeded episodes; iteration s uses instance seed and episode seed s."""
    if not isinstance(policy, Policy):
        policy = Policy(PolicyKind(policy))
    if seeds is None:
        if iterations < 1:
            raise ValueError("iterations must be >= 1")
        seeds = [seed_base + it for it in range(iterations)]
    seeds = [int(s) for s in seeds]
    jobs = [(config, policy, s) for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            episodes = list(pool.map(_run_one, jobs))
    else:
        episodes = [_run_one(j) for j in jobs]
    t_all = np.array([e.t_all for e in episodes], dtype=np.int64)
    mean, std = sample_stats(t_all)
    return ExperimentAggregate(
        policy=policy.kind.value,
        seeds=seeds,
        t_all=t_all,
        mean=mean,
        std=std,
        mean_curve=mean_curve([e.tagged_series for e in episodes]),
        episodes=episodes if keep_episodes else [],
    )
