"""Scenario model: responders, victims, geometry, triage and instance generation."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class InvalidParameterError(ValueError):
    pass


class TriageColor(enum.IntEnum):
    UNTAGGED = 0
    BLACK = 1
    RED = 2
    YELLOW = 3
    GREEN = 4


class FSMState(enum.IntEnum):
    IDLE = 0
    SELECT = 1
    MOVE = 2
    TAG = 3


@dataclass
class Responder:
    id: int
    speed: float
    tag_time: int
    position: tuple[float, float]
    fsm_state: FSMState = FSMState.IDLE
    claimed_victim: Optional[int] = None
    tag_timer: int = 0

    def __post_init__(self):
        if not self.speed > 0:
            raise InvalidParameterError(f"speed must be positive, got {self.speed}")
        if self.tag_time < 1:
            raise InvalidParameterError(f"tag_time must be >= 1, got {self.tag_time}")


@dataclass
class Victim:
    id: int
    position: tuple[float, float]
    health: float
    tagged: bool = False
    selected_by: Optional[int] = None
    triage_color: TriageColor = TriageColor.UNTAGGED

    def __post_init__(self):
        if not 0.0 <= self.health <= 1.0:
            raise InvalidParameterError(f"health must lie in [0, 1], got {self.health}")


def euclidean_dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def travel_time(d: float, speed: float) -> float:
    if not speed > 0:
        raise InvalidParameterError(f"speed must be positive, got {speed}")
    return d / speed


def start_color(h: float) -> TriageColor:
    """START triage color for a health value in [0, 1].

    Intervals are half-open on the right except Green, which includes 1.
    """
    if not 0.0 <= h <= 1.0:
        raise InvalidParameterError(f"health must lie in [0, 1], got {h}")
    if h < 0.25:
        return TriageColor.BLACK
    if h < 0.50:
        return TriageColor.RED
    if h < 0.75:
        return TriageColor.YELLOW
    return TriageColor.GREEN


class RngStream:
    """Seeded generator with independent sub-streams per purpose.

    Each sub-stream is spawned from the same root seed with a fixed spawn key,
    so draws from one purpose never shift the sequence of another.
    """

    PURPOSES = ("placement", "health", "scheduler", "policy", "exploration")

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams = {
            name: np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(idx,)))
            for idx, name in enumerate(self.PURPOSES)
        }

    def __getattr__(self, name):
        streams = self.__dict__.get("_streams", {})
        if name in streams:
            return streams[name]
        raise AttributeError(name)

    def clone(self, seed: int) -> "RngStream":
        return RngStream(seed)


@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    m: int
    width: float = 100.0
    height: float = 60.0
    speed: float = 1.0
    tag_time: int = 3
    start: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.n < 1 or self.m < 0:
            raise InvalidParameterError("need n >= 1 responders and m >= 0 victims")
        if not (self.width > 0 and self.height > 0):
            raise InvalidParameterError("area must be positive")
        if not self.speed > 0:
            raise InvalidParameterError("speed must be positive")
        if self.tag_time < 1:
            raise InvalidParameterError("tag_time must be >= 1")


@dataclass(frozen=True, eq=False)
class Instance:
    """An immutable incident scenario.

    Victim positions are authoritative; the distance matrix is derived from them.
    """

    width: float
    height: float
    start: tuple[float, float]
    speed: np.ndarray  # (n,)
    tag_time: np.ndarray  # (n,) integer steps
    victim_pos: np.ndarray  # (m, 2)
    health: np.ndarray  # (m,)
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("speed", "tag_time", "victim_pos", "health"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.victim_pos.size == 0:
            pos = np.zeros((0, 2))
            pos.setflags(write=False)
            object.__setattr__(self, "victim_pos", pos)
        if np.any(self.speed <= 0):
            raise InvalidParameterError("speeds must be positive")
        if np.any(self.tag_time < 1):
            raise InvalidParameterError("tag times must be >= 1")
        if np.any((self.health < 0) | (self.health > 1)):
            raise InvalidParameterError("health must lie in [0, 1]")

    @property
    def n(self) -> int:
        return len(self.speed)

    @property
    def m(self) -> int:
        return len(self.health)

    @property
    def responders(self) -> list[Responder]:
        return [
            Responder(i, float(self.speed[i]), int(self.tag_time[i]), tuple(self.start))
            for i in range(self.n)
        ]

    @property
    def victims(self) -> list[Victim]:
        return [
            Victim(j, (float(p[0]), float(p[1])), float(h))
            for j, (p, h) in enumerate(zip(self.victim_pos, self.health))
        ]

    @cached_property
    def distances(self) -> np.ndarray:
        """(m+1) x m matrix; row 0 holds start-to-victim distances, row j+1 victim j."""
        nodes = np.vstack([np.asarray(self.start, float)[None, :], self.victim_pos])
        diff = nodes[:, None, :] - self.victim_pos[None, :, :]
        d = np.sqrt((diff ** 2).sum(axis=-1))
        d.setflags(write=False)
        return d

    def node_position(self, j: int) -> np.ndarray:
        """Position of node j, where 0 is the start and j >= 1 is victim j-1."""
        return np.asarray(self.start, float) if j == 0 else self.victim_pos[j - 1]

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "start": list(self.start),
            "responders": [
                {"id": i, "speed": float(s), "tag_time": int(t)}
                for i, (s, t) in enumerate(zip(self.speed, self.tag_time))
            ],
            "victims": [
                {"id": j, "position": [float(p[0]), float(p[1])], "health": float(h)}
                for j, (p, h) in enumerate(zip(self.victim_pos, self.health))
            ],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Instance":
        victims = doc["victims"]
        return cls(
            width=float(doc["width"]),
            height=float(doc["height"]),
            start=tuple(float(c) for c in doc["start"]),
            speed=np.array([r["speed"] for r in doc["responders"]], float),
            tag_time=np.array([r["tag_time"] for r in doc["responders"]], int),
            victim_pos=np.array([v["position"] for v in victims], float).reshape(-1, 2),
            health=np.array([v["health"] for v in victims], float),
            seed=doc.get("seed"),
        )

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path_or_text) -> "Instance":
        p = Path(path_or_text) if not str(path_or_text).lstrip().startswith("{") else None
        text = p.read_text() if p is not None else str(path_or_text)
        return cls.from_dict(json.loads(text))


def make_instance(
    victim_pos: Sequence[Sequence[float]],
    n: int = 1,
    speed: float | Sequence[float] = 1.0,
    tag_time: int | Sequence[int] = 3,
    health: Optional[Sequence[float]] = None,
    width: Optional[float] = None,
    height: Optional[float] = None,
    start: tuple[float, float] = (0.0, 0.0),
) -> Instance:
    """Hand-built instance, mostly for tests and examples."""
    pos = np.asarray(victim_pos, float).reshape(-1, 2)
    m = len(pos)
    if health is None:
        health = np.ones(m)
    speeds = np.broadcast_to(np.asarray(speed, float), (n,)).copy()
    taus = np.broadcast_to(np.asarray(tag_time, int), (n,)).copy()
    if width is None:
        width = float(max(1.0, pos[:, 0].max() + 1 if m else 1.0, start[0]))
    if height is None:
        height = float(max(1.0, pos[:, 1].max() + 1 if m else 1.0, start[1]))
    return Instance(width, height, start, speeds, taus, pos, np.asarray(health, float))


def generate_instance(config: ScenarioConfig, rng: RngStream | int | None = None) -> Instance:
    """Place victims uniformly in the area and draw health uniformly in [0, 1]."""
    if rng is None:
        rng = RngStream(0)
    elif not isinstance(rng, RngStream):
        rng = RngStream(rng)
    xs = rng.placement.uniform(0.0, config.width, size=config.m)
    ys = rng.placement.uniform(0.0, config.height, size=config.m)
    health = rng.health.uniform(0.0, 1.0, size=config.m)
    return Instance(
        width=config.width,
        height=config.height,
        start=tuple(config.start),
        speed=np.full(config.n, config.speed, float),
        tag_time=np.full(config.n, config.tag_time, int),
        victim_pos=np.column_stack([xs, ys]),
        health=health,
        seed=rng.seed,
    )
