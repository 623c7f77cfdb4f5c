"""Training and evaluation of the factorized Q-network on the tagging environment."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .domain import RngStream, ScenarioConfig, generate_instance
from .marl import TaggingEnv, n_actions, resolve_conflicts, state_dim
from .qnet import Adam, Batch, NetSpec, Params, clip_gradients, copy_params, forward, init_params, masked, td_loss
from .sim import sample_stats

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
EPS_START, EPS_FINAL = 1.0, 0.1


def epsilon(episode: int, eps_decay: float) -> float:
    """Logarithmic decay from 1.0 to 0.1, reached at episode ``eps_decay``."""
    if episode < 0:
        raise ValueError("episode must be non-negative")
    frac = math.log1p(episode) / math.log1p(eps_decay)
    return max(EPS_FINAL, EPS_START - (EPS_START - EPS_FINAL) * frac)


class ReplayBuffer:
    """Fixed-capacity FIFO store backed by preallocated arrays."""

    def __init__(self, capacity: int, state_dim: int, n_agents: int, n_actions: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, n_agents), dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.next_masks = np.zeros((capacity, n_agents, n_actions), dtype=bool)
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.head = 0
        self.size = 0
        self.inserted = 0

    def __len__(self):
        return self.size

    def add(self, state, actions, reward, next_state, terminal, next_masks) -> None:
        h = self.head
        self.states[h] = state
        self.actions[h] = actions
        self.rewards[h] = reward
        self.next_states[h] = next_state
        self.terminal[h] = terminal
        self.next_masks[h] = next_masks
        self.ids[h] = self.inserted
        self.inserted += 1
        self.head = (h + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = rng.choice(self.size, size=batch_size, replace=batch_size > self.size)
        return Batch(
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.next_masks[idx],
            self.terminal[idx],
        )

    def stored_ids(self) -> np.ndarray:
        """Insertion ids currently held, oldest first."""
        if self.size < self.capacity:
            return self.ids[: self.size].copy()
        return np.roll(self.ids, -self.head)


@dataclass(frozen=True)
class TrainConfig:
    scenario: ScenarioConfig
    bins: int = 5
    lr: float = 5e-4
    gamma: float = 0.99
    f_update: int = 5000
    batch_size: int = 64
    eps_decay: int = 5000
    opt_every: int = 4
    step_cap: int = 5000
    episodes: int = 7000
    seed: int = 0
    hidden: tuple[int, ...] = (128, 64)
    buffer_capacity: int = 10_000
    max_grad_norm: float = 1.0
    checkpoint_every: int = 1000
    rerandomize: bool = True
    zeta: float = 1.0
    # store the submitted joint action so the loser of a conflict learns its cost;
    # False stores the resolved action that was actually executed
    store_submitted: bool = True
    # float32 trades bit-level reproducibility against float64 runs for speed
    dtype: str = "float64"

    def __post_init__(self):
        positive = ("bins", "lr", "f_update", "batch_size", "eps_decay", "opt_every", "step_cap", "buffer_capacity")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.episodes < 0:
            raise ValueError("episodes must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["scenario"]["start"] = list(self.scenario.start)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        sc = dict(doc.pop("scenario"))
        if "start" in sc:
            sc["start"] = tuple(sc["start"])
        if "hidden" in doc:
            doc["hidden"] = tuple(doc["hidden"])
        return cls(scenario=ScenarioConfig(**sc), **doc)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _preset(n, m, w, h, bins, lr, gamma, f_update, batch, eps_decay, episodes) -> TrainConfig:
    return TrainConfig(
        scenario=ScenarioConfig(n, m, float(w), float(h)),
        bins=bins,
        lr=lr,
        gamma=gamma,
        f_update=f_update,
        batch_size=batch,
        eps_decay=eps_decay,
        episodes=episodes,
    )


# published optimal hyperparameters per training scenario
TRAIN_PRESETS: dict[str, TrainConfig] = {
    "R1": _preset(3, 5, 5, 5, 5, 5e-4, 0.99, 5000, 64, 5000, 7000),
    "R2": _preset(3, 10, 5, 5, 10, 5e-4, 0.95, 5000, 128, 5000, 7000),
    "R3": _preset(3, 5, 25, 15, 10, 1e-3, 0.99, 10000, 128, 8000, 10000),
    "R4": _preset(5, 15, 25, 15, 10, 5e-4, 0.95, 5000, 128, 8000, 50000),
    "R5": _preset(5, 50, 25, 15, 5, 5e-4, 0.99, 5000, 128, 5000, 35000),
    "R6": _preset(5, 10, 50, 30, 10, 1e-3, 0.95, 10000, 128, 5000, 62000),
    "R7": _preset(5, 100, 50, 30, 5, 1e-3, 0.95, 5000, 64, 8000, 50000),
    "R8": _preset(20, 100, 50, 30, 10, 5e-4, 0.99, 10000, 128, 8000, 50000),
}

GRID_SEARCH_SPACE = {
    "bins": (5, 10),
    "lr": (5e-4, 1e-3),
    "gamma": (0.95, 0.99),
    "f_update": (5000, 10000),
    "batch_size": (64, 128),
    "eps_decay": (5000, 8000),
}


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, checkpoint: Optional[Path]):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainingCurves:
    loss: list[float] = field(default_factory=list)
    reward: list[float] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def append(self, loss, reward, steps, seconds) -> None:
        self.loss.append(float(loss))
        self.reward.append(float(reward))
        self.steps.append(int(steps))
        self.seconds.append(float(seconds))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("episode", "loss", "reward", "steps", "seconds"))
            for e, row in enumerate(zip(self.loss, self.reward, self.steps, self.seconds)):
                w.writerow((e, *row))

    def same_values(self, other: "TrainingCurves") -> bool:
        """Equality ignoring wall-clock time; NaN losses compare equal."""
        return (
            np.array_equal(self.loss, other.loss, equal_nan=True)
            and self.reward == other.reward
            and self.steps == other.steps
        )


@dataclass
class TrainResult:
    params: Params
    target: Params
    optimizer: Adam
    curves: TrainingCurves
    checkpoints: list[Path]
    env_steps: int
    config: TrainConfig


def act(
    params: Params,
    state: np.ndarray,
    masks: np.ndarray,
    eps: float,
    rng: np.random.Generator,
    world=None,
) -> np.ndarray:
    """Per-agent epsilon-greedy over legal actions, then conflict resolution when a world is given."""
    q = forward(params, state)
    actions = masked(q, masks).argmax(axis=-1)
    if eps > 0:
        explore = rng.random(len(actions)) < eps
        for i in np.flatnonzero(explore):
            legal = np.flatnonzero(masks[i])
            actions[i] = legal[rng.integers(len(legal))]
    if world is not None:
        actions = resolve_conflicts(actions, world)
    return actions


def net_spec(config: TrainConfig) -> NetSpec:
    sc = config.scenario
    return NetSpec(state_dim(sc.n, sc.m), sc.n, n_actions(sc.m), tuple(config.hidden))


def train(
    config: TrainConfig,
    checkpoint_dir: Optional[Path | str] = None,
    progress: Optional[Callable[[int, TrainingCurves], None]] = None,
) -> TrainResult:
    """Run the configured number of episodes and return the final network with curves."""
    rng = RngStream(config.seed)
    params = init_params(net_spec(config), rng.policy, np.dtype(config.dtype))
    target = copy_params(params)
    opt = Adam(lr=config.lr)
    sc = config.scenario
    buffer = ReplayBuffer(config.buffer_capacity, state_dim(sc.n, sc.m), sc.n, n_actions(sc.m))
    curves = TrainingCurves()
    checkpoints: list[Path] = []
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    fixed_instance = None if config.rerandomize else generate_instance(sc, RngStream(config.seed))
    env_steps = 0
    for episode in range(config.episodes):
        t0 = time.perf_counter()
        if fixed_instance is None:
            instance_seed = int(rng.placement.integers(2**20, 2**62))
            instance = generate_instance(sc, RngStream(instance_seed))
        else:
            instance = fixed_instance
        env = TaggingEnv(instance, config.bins, config.zeta, config.step_cap)
        state = env.reset()
        masks = env.masks()
        eps = epsilon(episode, config.eps_decay)
        total_reward, losses = 0.0, []
        while True:
            submitted = act(params, state, masks, eps, rng.exploration)
            executed = resolve_conflicts(submitted, env.world)
            out = env.step(executed)
            env_steps += 1
            stored = submitted if config.store_submitted else executed
            buffer.add(state, stored, out.reward, out.state, out.done, out.masks)
            total_reward += out.reward
            state, masks = out.state, out.masks
            if len(buffer) >= config.batch_size and env_steps % config.opt_every == 0:
                loss, grads = td_loss(buffer.sample(config.batch_size, rng.policy), params, target, config.gamma)
                if not np.isfinite(loss):
                    path = None
                    if checkpoint_dir is not None:
                        path = checkpoint_dir / f"diverged_ep{episode}.npz"
                        save_checkpoint(path, params, target, opt, config, episode, env_steps)
                    raise TrainingDiverged(f"non-finite loss at episode {episode}", path)
                opt.step(params, clip_gradients(grads, config.max_grad_norm))
                losses.append(loss)
            if env_steps % config.f_update == 0:
                target = copy_params(params)
            if out.done or out.truncated:
                break
        curves.append(np.mean(losses) if losses else np.nan, total_reward, env.world.t, time.perf_counter() - t0)
        done_eps = episode + 1
        if checkpoint_dir is not None and done_eps % config.checkpoint_every == 0:
            path = checkpoint_dir / f"checkpoint_ep{done_eps}.npz"
            save_checkpoint(path, params, target, opt, config, done_eps, env_steps)
            checkpoints.append(path)
        if progress is not None:
            progress(done_eps, curves)
    return TrainResult(params, target, opt, curves, checkpoints, env_steps, config)


@dataclass
class EvalResult:
    mean: float
    std: float
    t_all: np.ndarray
    seeds: list[int]
    failures: list[int]

    def summary(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "iterations": len(self.seeds),
            "seeds": self.seeds,
            "t_all": self.t_all.tolist(),
            "failures": self.failures,
        }


def rollout(params: Params, instance, bins: int, zeta: float = 1.0, step_cap: int = 5000):
    """Greedy episode; returns (steps, finished)."""
    env = TaggingEnv(instance, bins, zeta, step_cap)
    state = env.reset()
    masks = env.masks()
    while True:
        actions = act(params, state, masks, 0.0, None, env.world)
        out = env.step(actions)
        state, masks = out.state, out.masks
        if out.done:
            return env.world.t, True
        if out.truncated:
            return env.world.t, False


def evaluate(
    params: Params,
    scenario: ScenarioConfig,
    iterations: int = 50,
    bins: int = 5,
    seed_base: int = 0,
    seeds: Optional[Sequence[int]] = None,
    zeta: float = 1.0,
    step_cap: int = 5000,
) -> EvalResult:
    """Greedy rollouts on the same seeded instances the heuristic experiments use."""
    if seeds is None:
        seeds = list(range(seed_base, seed_base + iterations))
    seeds = [int(s) for s in seeds]
    steps, failures = [], []
    for s in seeds:
        t, ok = rollout(params, generate_instance(scenario, RngStream(s)), bins, zeta, step_cap)
        if ok:
            steps.append(t)
        else:
            failures.append(s)
    t_all = np.array(steps, dtype=np.int64)
    mean, std = sample_stats(t_all) if len(t_all) else (math.nan, math.nan)
    return EvalResult(mean, std, t_all, seeds, failures)


def save_checkpoint(path, params: Params, target: Params, opt: Adam, config: TrainConfig, episode: int, env_steps: int) -> Path:
    """Single npz holding weights, target weights, Adam moments and JSON metadata."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "episode": episode,
        "env_steps": env_steps,
        "adam_t": opt.t,
        "config": config.to_dict(),
        "shapes": {k: list(v.shape) for k, v in params.items()},
    }
    arrays = {f"p_{k}": v for k, v in params.items()}
    arrays.update({f"t_{k}": v for k, v in target.items()})
    arrays.update({f"m_{k}": v for k, v in opt.m.items()})
    arrays.update({f"v_{k}": v for k, v in opt.v.items()})
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)
    return path


@dataclass
class Checkpoint:
    params: Params
    target: Params
    optimizer: Adam
    config: TrainConfig
    episode: int
    env_steps: int


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")

        def group(prefix):
            return {k[len(prefix):]: data[k].copy() for k in data.files if k.startswith(prefix)}

        params, target = group("p_"), group("t_")
        config = TrainConfig.from_dict(meta["config"])
        opt = Adam(lr=config.lr, t=meta["adam_t"], m=group("m_"), v=group("v_"))
    return Checkpoint(params, target, opt, config, meta["episode"], meta["env_steps"])


def grid_configs(base: TrainConfig, space: dict[str, Iterable] = GRID_SEARCH_SPACE) -> list[TrainConfig]:
    keys = list(space)
    return [base.replace(**dict(zip(keys, values))) for values in itertools.product(*(space[k] for k in keys))]


def grid_search(
    base: TrainConfig,
    space: dict[str, Iterable] = GRID_SEARCH_SPACE,
    eval_iterations: int = 50,
    eval_seed_base: int = 0,
) -> list[tuple[TrainConfig, EvalResult]]:
    """Train every combination and rank by evaluation mean (expensive; batch use only)."""
    results = []
    for cfg in grid_configs(base, space):
        res = train(cfg)
        ev = evaluate(res.params, cfg.scenario, eval_iterations, cfg.bins, eval_seed_base, zeta=cfg.zeta, step_cap=cfg.step_cap)
        log.info("grid %s -> %.2f", cfg.to_dict(), ev.mean)
        results.append((cfg, ev))
    results.sort(key=lambda r: (math.isnan(r[1].mean), r[1].mean))
    return results
