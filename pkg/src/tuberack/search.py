"""Best-first rearrangement search over rack states.

Expansion is gated by neighborhood "simple filters" (a rough reachability
test for the gripper) and by a weight map of failed (state, move) records
fed back from geometric reasoning and motion planning.
"""

from __future__ import annotations

import enum
import heapq
import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable

from .rack import (
    EMPTY,
    GoalPattern,
    HoleCoord,
    MoveAction,
    RackState,
    is_goal,
    misplaced_count,
)

# (drow, dcol); rows grow along rack +y ("north"), columns along +x ("east")
DIRECTIONS: dict[str, tuple[int, int]] = {
    "N": (1, 0),
    "S": (-1, 0),
    "E": (0, 1),
    "W": (0, -1),
    "NE": (1, 1),
    "NW": (1, -1),
    "SE": (-1, 1),
    "SW": (-1, -1),
}


class SearchFailure(Exception):
    pass


class Unsolvable(SearchFailure):
    pass


class BudgetExhausted(SearchFailure):
    pass


@dataclass(frozen=True)
class AccessFilter:
    """All offsets in ``mask`` must be empty.

    ``requires_oob`` offsets restrict the filter to holes where those
    neighbors fall outside the rack (single-side edge filters).
    """

    mask: frozenset[tuple[int, int]]
    requires_oob: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self) -> None:
        if not self.mask:
            raise ValueError("filter mask must be non-empty")
        for dr, dc in self.mask | self.requires_oob:
            if (dr, dc) == (0, 0) or abs(dr) > 1 or abs(dc) > 1:
                raise ValueError(f"offset {(dr, dc)} outside the 8-neighborhood")

    @classmethod
    def of(cls, *names: str, requires_oob: Iterable[str] = ()) -> AccessFilter:
        return cls(frozenset(DIRECTIONS[n] for n in names), frozenset(DIRECTIONS[n] for n in requires_oob))


@dataclass(frozen=True)
class FilterBank:
    filters: tuple[AccessFilter, ...]
    oob_is_empty: bool = True

    def __post_init__(self) -> None:
        if not self.filters:
            raise ValueError("filter bank needs at least one filter")


def default_filter_bank(oob_is_empty: bool = True) -> FilterBank:
    return FilterBank(
        (
            AccessFilter.of("E", "W"),
            AccessFilter.of("N", "S"),
            AccessFilter.of("NE", "SW"),
            AccessFilter.of("NW", "SE"),
            AccessFilter.of("E", requires_oob=("W",)),
            AccessFilter.of("W", requires_oob=("E",)),
        ),
        oob_is_empty,
    )


class MoveMode(enum.Enum):
    ARRANGE = "arrange"
    SEPARATE = "separate"


@dataclass(frozen=True)
class MoveConstraint:
    mode: MoveMode = MoveMode.ARRANGE

    def allows(self, src: HoleCoord, dst: HoleCoord) -> bool:
        if self.mode is MoveMode.SEPARATE:
            return src.rack == 0 and dst.rack == 1
        return True


GLOBAL_KEY = -1  # fingerprints are unsigned, so this never collides


@dataclass
class WeightMap:
    """Failed (source-state fingerprint, move) records.

    With ``state_conditioned`` off every record is filed under ``GLOBAL_KEY``
    and bans its move from every state.
    """

    records: set[tuple[int, MoveAction]] = field(default_factory=set)
    state_conditioned: bool = True

    def key(self, fp: int) -> int:
        return fp if self.state_conditioned else GLOBAL_KEY

    def __contains__(self, key: tuple[int, MoveAction]) -> bool:
        fp, m = key
        return (self.key(fp), m) in self.records

    def __len__(self) -> int:
        return len(self.records)


def record_failure(wm: WeightMap, fp: int, m: MoveAction) -> WeightMap:
    """Add a failure record in place; returns ``wm`` for chaining."""
    wm.records.add((wm.key(fp), m))
    return wm


@lru_cache(maxsize=256)
def _filter_tables(shape: tuple[int, int], bank: FilterBank) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """Per hole index, the in-bounds neighbor indices each applicable filter needs empty."""
    rows, cols = shape
    tables = []
    for r in range(rows):
        for c in range(cols):
            usable = []
            for f in bank.filters:
                if any(0 <= r + dr < rows and 0 <= c + dc < cols for dr, dc in f.requires_oob):
                    continue
                need = []
                ok = True
                for dr, dc in sorted(f.mask):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols:
                        need.append(rr * cols + cc)
                    elif not bank.oob_is_empty:
                        ok = False
                        break
                if ok:
                    usable.append(tuple(need))
            tables.append(tuple(usable))
    return tuple(tables)


def _accessible_flags(cells: tuple[int, ...], shape: tuple[int, int], bank: FilterBank) -> list[bool]:
    tables = _filter_tables(shape, bank)
    return [any(all(cells[n] == EMPTY for n in need) for need in tables[i]) for i in range(len(cells))]


def is_accessible(state: RackState, c: HoleCoord, bank: FilterBank) -> bool:
    state[c]  # bounds check
    shape = state.shapes[c.rack]
    tables = _filter_tables(shape, bank)
    cells = state.cells[c.rack]
    return any(all(cells[n] == EMPTY for n in need) for need in tables[c.row * shape[1] + c.col])


def enumerate_moves(
    state: RackState,
    goal: GoalPattern | None,
    bank: FilterBank,
    constraint: MoveConstraint,
    wm: WeightMap | None = None,
) -> list[MoveAction]:
    """Every filtered pick/place pair, row-major by source then destination."""
    sources: list[tuple[HoleCoord, int]] = []
    targets: list[HoleCoord] = []
    for k, (shape, cells) in enumerate(zip(state.shapes, state.cells)):
        flags = _accessible_flags(cells, shape, bank)
        cols = shape[1]
        for i, (t, ok) in enumerate(zip(cells, flags)):
            if not ok:
                continue
            h = HoleCoord(k, i // cols, i % cols)
            if t == EMPTY:
                targets.append(h)
            else:
                sources.append((h, t))
    fp = state.fingerprint if wm else 0
    moves = []
    for src, t in sources:
        for dst in targets:
            if not constraint.allows(src, dst):
                continue
            m = MoveAction(src, dst, t)
            if wm and (fp, m) in wm:
                continue
            moves.append(m)
    return moves


@dataclass
class SearchNode:
    state: RackState
    g: int
    h: int
    parent: SearchNode | None = None
    via: MoveAction | None = None
    seq: int = 0

    def path(self) -> list[MoveAction]:
        out = []
        node = self
        while node.parent is not None:
            out.append(node.via)
            node = node.parent
        out.reverse()
        return out


@dataclass
class SearchStats:
    expansions: int = 0
    generated: int = 0


@lru_cache(maxsize=256)
def _filter_masks(shape: tuple[int, int], bank: FilterBank) -> tuple[tuple[int, ...], ...]:
    """``_filter_tables`` as bitmasks over the rack's row-major hole indices."""
    return tuple(tuple(sum(1 << n for n in need) for need in usable) for usable in _filter_tables(shape, bank))


@lru_cache(maxsize=64)
def _hole_coords(shapes: tuple[tuple[int, int], ...]) -> tuple[tuple[HoleCoord, ...], ...]:
    return tuple(tuple(HoleCoord(k, i // c, i % c) for i in range(r * c)) for k, (r, c) in enumerate(shapes))


def search(
    initial: RackState,
    goal: GoalPattern,
    bank: FilterBank,
    constraint: MoveConstraint,
    wm: WeightMap | None = None,
    budget: int = 1_000_000,
    on_expand: Callable[[RackState, MoveAction], None] | None = None,
    stats: SearchStats | None = None,
) -> list[MoveAction]:
    """Best-first search ordered by (g + h, h, insertion order).

    ``h`` is the misplaced-tube count, so it changes by at most one per
    move and the returned sequence is shortest within the filtered action
    space. Children are generated in ``enumerate_moves`` order. Raises
    ``Unsolvable`` when the frontier empties and ``BudgetExhausted`` when
    more than ``budget`` nodes would be expanded.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if initial.shapes != goal.shapes:
        misplaced_count(initial, goal)  # raises ShapeMismatch
    stats = stats if stats is not None else SearchStats()
    shapes = initial.shapes
    adm = goal.admissible
    masks = [_filter_masks(sh, bank) for sh in shapes]
    coords = _hole_coords(shapes)
    racks = range(len(shapes))
    separate = constraint.mode is MoveMode.SEPARATE
    banned_by_fp: dict[int, set[tuple[HoleCoord, HoleCoord, int]]] = {}
    for fp, m in (wm.records if wm is not None else ()):
        banned_by_fp.setdefault(fp, set()).add(m)

    seq = itertools.count()
    h0 = misplaced_count(initial, goal)
    # entries: (g + h, h, seq, g, cells, parent node, move)
    frontier: list[tuple] = [(h0, h0, next(seq), 0, initial.cells, None, None)]
    # keyed on the occupancy tuples themselves: exact, and cheaper than hashing
    # a fingerprint per generated child
    best_g: dict[tuple[tuple[int, ...], ...], int] = {initial.cells: 0}

    while frontier:
        f, h, sq, g0, cells, parent, via = heapq.heappop(frontier)
        if g0 > best_g[cells]:
            continue  # stale entry superseded by a cheaper path
        state = initial if parent is None else RackState._trusted(shapes, cells)
        node = SearchNode(state, g0, h, parent, via, sq)
        if h == 0 and is_goal(state, goal):
            return node.path()
        if stats.expansions >= budget:
            raise BudgetExhausted(f"search exceeded {budget} expansions")
        stats.expansions += 1
        g = g0 + 1
        banned = banned_by_fp.get(wm.key(state.fingerprint)) if banned_by_fp else None

        sources: list[tuple[int, int, int]] = []
        targets: list[tuple[int, int]] = []
        for k in racks:
            rc = cells[k]
            occ = 0
            for i, v in enumerate(rc):
                if v:
                    occ |= 1 << i
            mk = masks[k]
            for i, v in enumerate(rc):
                for need in mk[i]:
                    if not occ & need:
                        if v:
                            sources.append((k, i, v))
                        else:
                            targets.append((k, i))
                        break
        if separate:
            sources = [x for x in sources if x[0] == 0]
            targets = [x for x in targets if x[0] == 1]

        for ks, si, t in sources:
            a_src = adm[ks][si]
            h_lift = h - (a_src is not None and t not in a_src)
            src_rack = list(cells[ks])
            src_rack[si] = EMPTY
            src_c = coords[ks][si]
            for kd, di in targets:
                dst_c = coords[kd][di]
                m = None
                if banned is not None or on_expand is not None:
                    m = MoveAction(src_c, dst_c, t)
                    if banned is not None and m in banned:
                        continue
                    if on_expand is not None:
                        on_expand(state, m)
                new = list(cells)
                if ks == kd:
                    row = src_rack.copy()
                    row[di] = t
                    new[ks] = tuple(row)
                else:
                    new[ks] = tuple(src_rack)
                    row = list(cells[kd])
                    row[di] = t
                    new[kd] = tuple(row)
                new_cells = tuple(new)
                if g >= best_g.get(new_cells, g + 1):
                    continue
                best_g[new_cells] = g
                a_dst = adm[kd][di]
                hc = h_lift + (a_dst is not None and t not in a_dst)
                stats.generated += 1
                heapq.heappush(frontier, (g + hc, hc, next(seq), g, new_cells, node,
                                          m if m is not None else MoveAction(src_c, dst_c, t)))
    raise Unsolvable("frontier exhausted without reaching the goal pattern")
