"""Rack, tube and goal data model plus move semantics.

Occupancy is stored per rack as a row-major tuple of tube ids, with
``EMPTY`` (0) marking a free hole. Tube ids are therefore >= 1.
"""

from __future__ import annotations

import hashlib
import struct
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .transforms import RigidTransform

EMPTY = 0


class RackError(ValueError):
    pass


class SourceEmpty(RackError):
    pass


class DestinationOccupied(RackError):
    pass


class TypeMismatch(RackError):
    pass


class ShapeMismatch(RackError):
    pass


class OutOfBounds(RackError):
    pass


@dataclass(frozen=True)
class TubeType:
    id: int
    name: str
    radius_mm: float
    height_mm: float
    protrusion_mm: float
    symbol: str = ""

    def __post_init__(self) -> None:
        if self.id < 1:
            raise ValueError(f"tube id must be >= 1, got {self.id}")
        if self.radius_mm <= 0:
            raise ValueError("radius_mm must be positive")
        if not (self.height_mm > self.protrusion_mm > 0):
            raise ValueError("need height_mm > protrusion_mm > 0")
        if not self.symbol:
            object.__setattr__(self, "symbol", self.name[:1].upper())


class HoleCoord(NamedTuple):
    rack: int
    row: int
    col: int

    def __str__(self) -> str:
        return f"{self.rack}:{self.row},{self.col}"


class MoveAction(NamedTuple):
    src: HoleCoord
    dst: HoleCoord
    tube: int

    def __str__(self) -> str:
        return f"{self.tube}@{self.src}->{self.dst}"


@dataclass(frozen=True)
class RackLayout:
    rows: int
    cols: int
    pitch_mm: float = 20.0
    hole_width_mm: float = 17.0
    hole_depth_mm: float = 60.0
    base_pose: RigidTransform = field(default_factory=RigidTransform)
    wall_thickness_mm: float = 4.0
    base_thickness_mm: float = 5.0
    # orientation key on the row-0/col-0 corner; breaks the 180 degree symmetry
    key_tab_mm: tuple[float, float] = (12.0, 25.0)

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rack needs at least one row and column")
        if not self.hole_width_mm < self.pitch_mm:
            raise ValueError("hole_width_mm must be smaller than pitch_mm")
        if self.hole_depth_mm <= 0:
            raise ValueError("hole_depth_mm must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def footprint(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the rack body in its own frame, tab excluded."""
        m = self.hole_width_mm / 2.0 + self.wall_thickness_mm
        return (-m, (self.cols - 1) * self.pitch_mm + m, -m, (self.rows - 1) * self.pitch_mm + m)

    def key_tab(self) -> tuple[float, float, float, float]:
        xmin, _, ymin, _ = self.footprint()
        length, width = self.key_tab_mm
        return (xmin - length, xmin, ymin, ymin + width)

    def with_pose(self, pose: RigidTransform) -> RackLayout:
        return RackLayout(
            self.rows, self.cols, self.pitch_mm, self.hole_width_mm, self.hole_depth_mm,
            pose, self.wall_thickness_mm, self.base_thickness_mm, self.key_tab_mm,
        )


@dataclass(frozen=True)
class RackState:
    shapes: tuple[tuple[int, int], ...]
    cells: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if len(self.shapes) != len(self.cells):
            raise ShapeMismatch("shapes and cells disagree on rack count")
        for (r, c), cells in zip(self.shapes, self.cells):
            if len(cells) != r * c:
                raise ShapeMismatch(f"rack of shape {r}x{c} needs {r * c} cells, got {len(cells)}")

    @classmethod
    def empty(cls, shapes: Sequence[tuple[int, int]]) -> RackState:
        shapes = tuple(tuple(s) for s in shapes)
        return cls(shapes, tuple((EMPTY,) * (r * c) for r, c in shapes))

    @classmethod
    def from_grids(cls, grids: Sequence[Sequence[Sequence[int]]]) -> RackState:
        """Build from nested per-rack ``grid[row][col]`` lists."""
        shapes, cells = [], []
        for grid in grids:
            rows = len(grid)
            cols = len(grid[0]) if rows else 0
            if any(len(row) != cols for row in grid):
                raise ShapeMismatch("ragged grid")
            shapes.append((rows, cols))
            cells.append(tuple(int(v) for row in grid for v in row))
        return cls(tuple(shapes), tuple(cells))

    def grids(self) -> list[list[list[int]]]:
        out = []
        for (rows, cols), cells in zip(self.shapes, self.cells):
            out.append([list(cells[r * cols:(r + 1) * cols]) for r in range(rows)])
        return out

    def in_bounds(self, c: HoleCoord) -> bool:
        if not 0 <= c.rack < len(self.shapes):
            return False
        rows, cols = self.shapes[c.rack]
        return 0 <= c.row < rows and 0 <= c.col < cols

    def __getitem__(self, c: HoleCoord) -> int:
        if not self.in_bounds(c):
            raise OutOfBounds(f"hole {c} outside racks {self.shapes}")
        return self.cells[c.rack][c.row * self.shapes[c.rack][1] + c.col]

    def holes(self) -> Iterator[HoleCoord]:
        for k, (rows, cols) in enumerate(self.shapes):
            for r in range(rows):
                for c in range(cols):
                    yield HoleCoord(k, r, c)

    def occupied(self) -> Iterator[tuple[HoleCoord, int]]:
        for h in self.holes():
            t = self[h]
            if t != EMPTY:
                yield h, t

    def tube_counts(self) -> Counter:
        return Counter(t for cells in self.cells for t in cells if t != EMPTY)

    def replace(self, updates: Iterable[tuple[HoleCoord, int]]) -> RackState:
        cells = list(self.cells)
        touched: dict[int, list[int]] = {}
        for h, v in updates:
            if not self.in_bounds(h):
                raise OutOfBounds(f"hole {h} outside racks {self.shapes}")
            row = touched.get(h.rack)
            if row is None:
                row = touched[h.rack] = list(cells[h.rack])
            row[h.row * self.shapes[h.rack][1] + h.col] = v
        for k, row in touched.items():
            cells[k] = tuple(row)
        return RackState._trusted(self.shapes, tuple(cells))

    @classmethod
    def _trusted(cls, shapes, cells) -> RackState:
        # skips validation; callers guarantee consistent shapes
        obj = object.__new__(cls)
        object.__setattr__(obj, "shapes", shapes)
        object.__setattr__(obj, "cells", cells)
        return obj

    @cached_property
    def fingerprint(self) -> int:
        return state_fingerprint(self)


@dataclass(frozen=True)
class GoalPattern:
    """Per-hole admissible tube-id sets.

    ``None`` marks a don't-care hole, an empty frozenset a hole that must
    stay empty.
    """

    shapes: tuple[tuple[int, int], ...]
    admissible: tuple[tuple[frozenset[int] | None, ...], ...]

    def __post_init__(self) -> None:
        if len(self.shapes) != len(self.admissible):
            raise ShapeMismatch("goal shapes and admissible sets disagree")
        for (r, c), adm in zip(self.shapes, self.admissible):
            if len(adm) != r * c:
                raise ShapeMismatch(f"goal rack {r}x{c} needs {r * c} entries, got {len(adm)}")

    @classmethod
    def from_grids(cls, grids: Sequence[Sequence[Sequence[Iterable[int] | None]]]) -> GoalPattern:
        shapes, adm = [], []
        for grid in grids:
            rows, cols = len(grid), len(grid[0])
            shapes.append((rows, cols))
            adm.append(tuple(None if v is None else frozenset(v) for row in grid for v in row))
        return cls(tuple(shapes), tuple(adm))

    def at(self, c: HoleCoord) -> frozenset[int] | None:
        return self.admissible[c.rack][c.row * self.shapes[c.rack][1] + c.col]


def _check_shapes(state: RackState, goal: GoalPattern) -> None:
    if state.shapes != goal.shapes:
        raise ShapeMismatch(f"state shapes {state.shapes} != goal shapes {goal.shapes}")


def apply_move(state: RackState, m: MoveAction) -> RackState:
    if m.src == m.dst:
        raise RackError("move source and destination coincide")
    occupant = state[m.src]
    if occupant == EMPTY:
        raise SourceEmpty(f"no tube at {m.src}")
    if occupant != m.tube:
        raise TypeMismatch(f"move expects tube {m.tube} at {m.src}, found {occupant}")
    if state[m.dst] != EMPTY:
        raise DestinationOccupied(f"hole {m.dst} already holds tube {state[m.dst]}")
    return state.replace(((m.src, EMPTY), (m.dst, m.tube)))


def is_misplaced(goal: GoalPattern, c: HoleCoord, tube: int) -> bool:
    adm = goal.at(c)
    return adm is not None and tube not in adm


def misplaced_count(state: RackState, goal: GoalPattern) -> int:
    """Occupied holes whose tube is outside the hole's admissible set."""
    _check_shapes(state, goal)
    n = 0
    for cells, adm in zip(state.cells, goal.admissible):
        for t, a in zip(cells, adm):
            if t != EMPTY and a is not None and t not in a:
                n += 1
    return n


def is_goal(state: RackState, goal: GoalPattern) -> bool:
    # mandatory-empty holes have an empty admissible set, so any occupant is
    # already counted as misplaced; the explicit check keeps the definition visible
    if misplaced_count(state, goal) != 0:
        return False
    for cells, adm in zip(state.cells, goal.admissible):
        for t, a in zip(cells, adm):
            if a is not None and not a and t != EMPTY:
                return False
    return True


@lru_cache(maxsize=64)
def _rack_struct(rows: int, cols: int) -> struct.Struct:
    return struct.Struct(f"<HH{rows * cols}H")


def serialize_state(state: RackState) -> bytes:
    """Canonical row-major byte encoding: rack count, then per rack its shape and occupants."""
    parts = [struct.pack("<H", len(state.shapes))]
    for (r, c), cells in zip(state.shapes, state.cells):
        parts.append(_rack_struct(r, c).pack(r, c, *cells))
    return b"".join(parts)


def state_fingerprint(state: RackState) -> int:
    digest = hashlib.blake2b(serialize_state(state), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def hole_local_position(layout: RackLayout, c: HoleCoord) -> np.ndarray:
    return np.array([c.col * layout.pitch_mm, c.row * layout.pitch_mm, 0.0])


def hole_world_pose(layout: RackLayout, c: HoleCoord) -> tuple[np.ndarray, np.ndarray]:
    """World position of the hole's top center and its insertion axis (rack +z)."""
    if not (0 <= c.row < layout.rows and 0 <= c.col < layout.cols):
        raise OutOfBounds(f"hole ({c.row}, {c.col}) outside {layout.rows}x{layout.cols} rack")
    pos = layout.base_pose.apply(hole_local_position(layout, c))
    axis = layout.base_pose.rotation @ np.array([0.0, 0.0, 1.0])
    return pos, axis
