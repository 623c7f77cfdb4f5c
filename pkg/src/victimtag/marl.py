"""Cooperative tagging environment for factorized Q-learning.

Every step each agent submits one action from a masked discrete space:
0 idle, 1 move, 2 tag, 3 + j select victim j. Duplicate selections are
resolved after the fact in favour of the nearest agent, and the resolved joint
action is applied through the simulator's FSM primitives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .domain import Instance, InvalidParameterError, RngStream
from .policies import Policy, PolicyKind
from .sim import IDLE, MOVE, SELECT, WorldState, advance, apply_idle, apply_select, end_step, episode_result

ACT_IDLE, ACT_MOVE, ACT_TAG = 0, 1, 2
N_FSM = 4
SELECT_OFFSET = 3

STEP_PENALTY = -1.0
BASE_TAG_REWARD = 30.0


class IllegalActionError(RuntimeError):
    pass


def n_actions(m: int) -> int:
    return SELECT_OFFSET + m


def state_dim(n: int, m: int) -> int:
    return n * m + N_FSM * n + 2 * m


def bin_distance(dist, zeta: float = 1.0, width: float = 100.0, bins: int = 5):
    """Discretize distances: 0 below zeta, 1 below 2*zeta, else width/bins buckets clamped to bins-1."""
    if bins < 2 or not width > 0 or not zeta > 0:
        raise InvalidParameterError("need bins >= 2 and positive width and zeta")
    d = np.asarray(dist, float)
    out = np.minimum(np.floor(d / (width / bins)), bins - 1).astype(np.int64)
    out = np.where(d < 2 * zeta, 1, out)
    out = np.where(d < zeta, 0, out)
    return int(out) if out.ndim == 0 else out


def _pairwise(world: WorldState) -> np.ndarray:
    diff = world.victim_pos[None, :, :] - world.pos[:, None, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def encode_state(world: WorldState, bins: int, zeta: float = 1.0) -> np.ndarray:
    """Flat vector: binned distances (agent-major), FSM one-hots, selection bits, tagged bits."""
    n, m = world.n, world.m
    d = bin_distance(_pairwise(world), zeta, world.instance.width, bins) if m else np.zeros((n, 0))
    fsm = np.zeros((n, N_FSM))
    fsm[np.arange(n), world.state] = 1.0
    xi = (world.claimant >= 0).astype(float)
    g = world.tagged.astype(float)
    return np.concatenate([np.asarray(d, float).ravel() / (bins - 1), fsm.ravel(), xi, g])


def legal_mask(world: WorldState, i: int) -> np.ndarray:
    mask = np.zeros(n_actions(world.m), dtype=bool)
    s = world.state[i]
    if s == IDLE or s == SELECT:
        avail = world.available()
        mask[SELECT_OFFSET:] = avail
        mask[ACT_IDLE] = not avail.any()
    elif s == MOVE:
        if world.dist(i, world.claim[i]) >= world.zeta:
            mask[ACT_MOVE] = True
        else:
            mask[ACT_TAG] = True
    else:
        mask[ACT_TAG] = True
    return mask


def legal_masks(world: WorldState) -> np.ndarray:
    return np.stack([legal_mask(world, i) for i in range(world.n)])


def resolve_conflicts(actions: Sequence[int], world: WorldState) -> np.ndarray:
    """Keep each contested victim with its nearest selector (lower id on ties); the rest idle."""
    actions = np.array(actions, dtype=np.int64)
    sel = np.flatnonzero(actions >= SELECT_OFFSET)
    if len(sel) < 2:
        return actions
    victims = actions[sel] - SELECT_OFFSET
    for k in np.unique(victims):
        agents = sel[victims == k]
        if len(agents) < 2:
            continue
        d = np.array([world.dist(int(a), int(k)) for a in agents])
        keep = agents[np.argmin(d)]  # agents are ascending, so argmin picks the lower id on ties
        actions[agents[agents != keep]] = ACT_IDLE
    return actions


def tag_reward(steps_t: int, v_tagged: int) -> float:
    return (BASE_TAG_REWARD - 0.5 * (steps_t // 10)) * (1.0 + 0.1 * v_tagged)


def compute_rewards(taggers: Sequence[int], n: int, steps_t: int, v_tagged: int) -> tuple[np.ndarray, float]:
    """Per-agent rewards: -1 each, replaced by the tag reward for agents completing a tag."""
    if steps_t < 0:
        raise InvalidParameterError("steps_t must be non-negative")
    r = np.full(n, STEP_PENALTY)
    if len(taggers):
        r[np.asarray(taggers, dtype=np.int64)] = tag_reward(steps_t, v_tagged)
    return r, float(r.sum())


def executable_mask(world: WorldState) -> np.ndarray:
    """Pre-step masks plus the idle that conflict resolution may force on selecting agents."""
    masks = legal_masks(world)
    masks[:, ACT_IDLE] |= (world.state == IDLE) | (world.state == SELECT)
    return masks


@dataclass
class Transition:
    state: np.ndarray
    actions: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool
    next_masks: np.ndarray
    truncated: bool = False


@dataclass
class StepOutcome:
    state: np.ndarray
    reward: float
    rewards: np.ndarray
    done: bool
    truncated: bool
    masks: np.ndarray


class TaggingEnv:
    """Single-instance environment; the clock and FSM follow the simulator exactly."""

    def __init__(self, instance: Instance, bins: int = 5, zeta: float = 1.0, step_cap: int = 5000):
        if bins < 2:
            raise InvalidParameterError("bins must be >= 2")
        self.instance = instance
        self.bins = bins
        self.zeta = zeta
        self.step_cap = step_cap
        self.world = WorldState(instance, zeta)

    @property
    def n(self) -> int:
        return self.instance.n

    @property
    def m(self) -> int:
        return self.instance.m

    @property
    def n_actions(self) -> int:
        return n_actions(self.m)

    @property
    def state_dim(self) -> int:
        return state_dim(self.n, self.m)

    def reset(self) -> np.ndarray:
        self.world = WorldState(self.instance, self.zeta)
        return self.observe()

    def observe(self) -> np.ndarray:
        return encode_state(self.world, self.bins, self.zeta)

    def masks(self) -> np.ndarray:
        return legal_masks(self.world)

    @property
    def done(self) -> bool:
        return self.world.done

    def step(self, actions: Sequence[int]) -> StepOutcome:
        world = self.world
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.n,):
            raise IllegalActionError(f"expected {self.n} actions, got shape {actions.shape}")
        if world.done:
            raise IllegalActionError("episode already finished")
        allowed = executable_mask(world)
        if np.any((actions < 0) | (actions >= self.n_actions)):
            raise IllegalActionError(f"action index out of range: {actions.tolist()}")
        bad = ~allowed[np.arange(self.n), actions]
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise IllegalActionError(f"agent {i} cannot take action {actions[i]} in state {world.state[i]}")
        picked = actions[actions >= SELECT_OFFSET]
        if len(picked) != len(np.unique(picked)):
            raise IllegalActionError("two agents select the same victim; resolve conflicts first")
        steps_t = world.t
        movers = []
        for i, a in enumerate(actions):
            if a >= SELECT_OFFSET:
                apply_select(world, i, int(a - SELECT_OFFSET))
            elif a == ACT_IDLE:
                apply_idle(world, i)
            else:
                movers.append(i)
        taggers = advance(world, movers)
        end_step(world)
        rewards, total = compute_rewards(taggers, self.n, steps_t, world.n_tagged)
        done = world.done
        truncated = not done and world.t >= self.step_cap
        return StepOutcome(self.observe(), total, rewards, done, truncated, self.masks())

    def result(self):
        return episode_result(self.world)


class HeuristicActor:
    """Drives the environment with a heuristic, reproducing the simulator's episode.

    Each step it replays the simulator's activation order on a scratch copy of
    the world to learn which victim every selecting agent would pick, then
    emits those choices as a joint action. Valid for policies without
    preemption (RVP, NVP, LGAP).
    """

    def __init__(self, policy: Policy | str, instance: Instance, seed: int = 0):
        if not isinstance(policy, Policy):
            policy = Policy(PolicyKind(policy))
        if policy.kind in (PolicyKind.LNVP, PolicyKind.LCVP):
            raise ValueError("preemptive policies cannot be expressed as environment actions")
        self.policy = policy.for_instance(instance)
        self.rng = RngStream(seed)

    def __call__(self, world: WorldState) -> np.ndarray:
        from .sim import step

        scratch = world.copy()
        before = world.state.copy()
        step(scratch, self.policy, self.rng)
        actions = np.empty(world.n, dtype=np.int64)
        for i in range(world.n):
            s = before[i]
            if s == IDLE or s == SELECT:
                k = scratch.claim[i]
                actions[i] = SELECT_OFFSET + k if k >= 0 else ACT_IDLE
            elif s == MOVE and world.dist(i, world.claim[i]) >= world.zeta:
                actions[i] = ACT_MOVE
            else:
                actions[i] = ACT_TAG
        return actions


def run_heuristic_in_env(instance: Instance, policy: Policy | str, seed: int = 0, bins: int = 5, step_cap: int = 100_000):
    """Roll out a heuristic through the environment; returns (EpisodeResult, rewards per step)."""
    env = TaggingEnv(instance, bins=bins, step_cap=step_cap)
    env.reset()
    actor = HeuristicActor(policy, instance, seed)
    totals = []
    while not env.done:
        out = env.step(actor(env.world))
        totals.append(out.reward)
        if out.truncated:
            break
    return env.result(), totals


def random_legal_actions(masks: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform legal action per agent."""
    out = np.empty(len(masks), dtype=np.int64)
    for i, mk in enumerate(masks):
        legal = np.flatnonzero(mk)
        out[i] = legal[rng.integers(len(legal))]
    return out


def conflict_free(actions: Sequence[int]) -> bool:
    picked = [a for a in actions if a >= SELECT_OFFSET]
    return len(picked) == len(set(picked))


def masks_allow(masks: np.ndarray, actions: Sequence[int], world: Optional[WorldState] = None) -> bool:
    """True when every action is legal under the masks (or is a conflict-forced idle)."""
    actions = np.asarray(actions)
    ok = masks[np.arange(len(actions)), actions]
    if world is not None:
        ok |= (actions == ACT_IDLE) & ((world.state == IDLE) | (world.state == SELECT))
    return bool(ok.all())
