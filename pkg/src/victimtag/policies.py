"""Distributed victim-selection heuristics.

Every selector maps (responder index, world snapshot) to the index of the next
victim to claim, or ``None`` when the responder should idle. Selectors never
mutate the world; the simulator applies claims and preemptions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


class PolicyKind(str, enum.Enum):
    RVP = "rvp"
    NVP = "nvp"
    LNVP = "lnvp"
    LCVP = "lcvp"
    LGAP = "lgap"


ALL_POLICIES = tuple(PolicyKind)


@dataclass(frozen=True)
class Cell:
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x, y, width: float, height: float):
        """Half-open membership; the area's far edges belong to the last cells."""
        x = np.asarray(x)
        y = np.asarray(y)
        in_x = (x >= self.x0) & ((x < self.x1) | ((self.x1 >= width) & (x <= self.x1)))
        in_y = (y >= self.y0) & ((y < self.y1) | ((self.y1 >= height) & (y <= self.y1)))
        return in_x & in_y

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True)
class CellPartition:
    width: float
    height: float
    cells: tuple[Cell, ...]

    def __len__(self):
        return len(self.cells)

    def membership(self, i: int, positions: np.ndarray) -> np.ndarray:
        positions = np.asarray(positions, float).reshape(-1, 2)
        return self.cells[i].contains(positions[:, 0], positions[:, 1], self.width, self.height)

    def cell_of(self, point) -> int:
        for idx, c in enumerate(self.cells):
            if c.contains(point[0], point[1], self.width, self.height):
                return idx
        raise ValueError(f"point {point} outside the area")


def partition_cells(width: float, height: float, n: int, layout: str = "grid") -> CellPartition:
    """Split the area into n cells, one per responder.

    ``grid`` uses ceil(sqrt(n)) columns and ceil(n / columns) rows; when the
    last row needs fewer cells than there are columns, its final cell absorbs
    the surplus width. ``strips`` cuts the width into n equal vertical bands.
    """
    if n < 1:
        raise ValueError("need at least one cell")
    if layout == "strips":
        cw = width / n
        return CellPartition(
            width,
            height,
            tuple(Cell(c * cw, 0.0, width if c == n - 1 else (c + 1) * cw, height) for c in range(n)),
        )
    if layout != "grid":
        raise ValueError(f"unknown cell layout {layout!r}")
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    last_row = n - cols * (rows - 1)
    cw, ch = width / cols, height / rows
    cells = []
    for r in range(rows):
        y0 = r * ch
        y1 = height if r == rows - 1 else (r + 1) * ch
        count = last_row if r == rows - 1 else cols
        for c in range(count):
            x0 = c * cw
            x1 = width if c == count - 1 else (c + 1) * cw
            cells.append(Cell(x0, y0, x1, y1))
    return CellPartition(width, height, tuple(cells))


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    zeta: float = 1.0
    cells: Optional[CellPartition] = None
    cell_layout: str = "strips"

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")

    def for_instance(self, instance) -> "Policy":
        """Bind a cell partition for LGAP if none was given."""
        if self.kind is PolicyKind.LGAP and self.cells is None:
            cells = partition_cells(instance.width, instance.height, instance.n, self.cell_layout)
            return Policy(self.kind, self.zeta, cells, self.cell_layout)
        if self.cells is not None and len(self.cells) != instance.n:
            raise ValueError("LGAP needs exactly one cell per responder")
        return self


def _distances_from(world, i: int) -> np.ndarray:
    diff = world.victim_pos - world.pos[i]
    return np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1])


def _argmin(d: np.ndarray, ok: np.ndarray) -> Optional[int]:
    if not ok.any():
        return None
    return int(np.argmin(np.where(ok, d, np.inf)))


def _preemptable(world, i: int, d: np.ndarray, zeta: float) -> np.ndarray:
    """Untagged victims that are unclaimed or whose claimant is both farther than i and farther than zeta."""
    claimant = world.claimant
    ok = claimant < 0
    claimed = np.flatnonzero(~ok)
    if len(claimed):
        owners = claimant[claimed]
        diff = world.victim_pos[claimed] - world.pos[owners]
        dc = np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1])
        ok[claimed] = (dc > d[claimed]) & (dc > zeta) & (owners != i)
    ok &= ~world.tagged
    return ok


def rvp_select(i: int, world, rng: np.random.Generator) -> Optional[int]:
    ok = ~world.tagged & (world.claimant < 0)
    choices = np.flatnonzero(ok)
    if len(choices) == 0:
        return None
    return int(choices[rng.integers(len(choices))])


def nvp_select(i: int, world) -> Optional[int]:
    ok = ~world.tagged & (world.claimant < 0)
    return _argmin(_distances_from(world, i), ok)


def lnvp_select(i: int, world, zeta: float = 1.0) -> Optional[int]:
    d = _distances_from(world, i)
    return _argmin(d, _preemptable(world, i, d, zeta))


def lcvp_select(i: int, world, zeta: float = 1.0) -> Optional[int]:
    """Nearest selectable critical victim, else the LNVP choice.

    Falls back to LNVP whenever no critical victim can be selected, including
    the case where every untagged critical victim is held by a closer claimant.
    """
    # only the critical flag is observed, never the health value itself
    d = _distances_from(world, i)
    ok = _preemptable(world, i, d, zeta)
    critical = ok & world.critical
    if critical.any():
        return _argmin(d, critical)
    return _argmin(d, ok)


def lgap_select(i: int, world, cells: CellPartition) -> Optional[int]:
    ok = ~world.tagged & (world.claimant < 0) & cells.membership(i, world.victim_pos)
    return _argmin(_distances_from(world, i), ok)


def select(i: int, world, policy: Policy, rng: Optional[np.random.Generator] = None) -> Optional[int]:
    kind = policy.kind
    if kind is PolicyKind.RVP:
        if rng is None:
            raise ValueError("RVP needs a random generator")
        return rvp_select(i, world, rng)
    if kind is PolicyKind.NVP:
        return nvp_select(i, world)
    if kind is PolicyKind.LNVP:
        return lnvp_select(i, world, policy.zeta)
    if kind is PolicyKind.LCVP:
        return lcvp_select(i, world, policy.zeta)
    if policy.cells is None:
        raise ValueError("LGAP needs a cell partition; call Policy.for_instance first")
    return lgap_select(i, world, policy.cells)
