"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

from collections import deque

import numpy as np

from tuberack import geometry as geo
from tuberack.rack import EMPTY, GoalPattern, HoleCoord, MoveAction, RackState, TubeType
from tuberack.scenario import Scenario, scenario_from_dict
from tuberack.world import WorldModel

A = TubeType(1, "blue", 8.0, 95.0, 40.0, "A")
B = TubeType(2, "red", 6.5, 100.0, 50.0, "B")
CATALOG = (A, B)

TUBES_JSON = [
    {"id": 1, "name": "blue", "symbol": "A", "radius_mm": 8.0, "height_mm": 95.0, "protrusion_mm": 40.0},
    {"id": 2, "name": "red", "symbol": "B", "radius_mm": 6.5, "height_mm": 100.0, "protrusion_mm": 50.0},
]


def scenario(initial: list, goal: list, racks: list | None = None, **extra) -> Scenario:
    """Scenario from row-string grids; ``initial``/``goal`` hold one row list per rack."""
    if racks is None:
        racks = [{"rows": len(g), "cols": len(g[0].split())} for g in initial]
    d = {"seed": extra.pop("seed", 0), "tubes": TUBES_JSON, "racks": racks, "initial": initial, "goal": goal}
    d.update(extra)
    return scenario_from_dict(d)


# --- task-search oracle ------------------------------------------------------
# The default bank written out directly from its definition, independent of
# the filter tables used by the library.

_PAIRS = [((0, 1), (0, -1)), ((1, 0), (-1, 0)), ((1, 1), (-1, -1)), ((1, -1), (-1, 1))]


def naive_accessible(cells: tuple[int, ...], rows: int, cols: int, r: int, c: int) -> bool:
    def inside(rr, cc):
        return 0 <= rr < rows and 0 <= cc < cols

    def empty(rr, cc):
        return not inside(rr, cc) or cells[rr * cols + cc] == EMPTY

    for a, b in _PAIRS:
        if empty(r + a[0], c + a[1]) and empty(r + b[0], c + b[1]):
            return True
    # single-side filters: E usable when W is off the rack, and vice versa
    if not inside(r, c - 1) and empty(r, c + 1):
        return True
    if not inside(r, c + 1) and empty(r, c - 1):
        return True
    return False


def naive_moves(state: RackState, separate: bool = False) -> list[MoveAction]:
    srcs, dsts = [], []
    for k, ((rows, cols), cells) in enumerate(zip(state.shapes, state.cells)):
        for r in range(rows):
            for c in range(cols):
                if naive_accessible(cells, rows, cols, r, c):
                    t = cells[r * cols + c]
                    (dsts if t == EMPTY else srcs).append((HoleCoord(k, r, c), t))
    out = []
    for s, t in srcs:
        for d, _ in dsts:
            if separate and not (s.rack == 0 and d.rack == 1):
                continue
            out.append(MoveAction(s, d, t))
    return out


def naive_goal(state: RackState, goal: GoalPattern) -> bool:
    for cells, adm in zip(state.cells, goal.admissible):
        for t, a in zip(cells, adm):
            if a is None:
                continue
            if t == EMPTY:
                continue
            if t not in a:
                return False
    return True


def naive_apply(state: RackState, m: MoveAction) -> RackState:
    grids = state.grids()
    grids[m.src.rack][m.src.row][m.src.col] = EMPTY
    grids[m.dst.rack][m.dst.row][m.dst.col] = m.tube
    return RackState.from_grids(grids)


def bfs_length(initial: RackState, goal: GoalPattern, separate: bool = False, limit: int = 200_000) -> int | None:
    """Shortest move count over the default filtered action space, or None if unreachable."""
    if naive_goal(initial, goal):
        return 0
    seen = {initial.cells}
    q = deque([(initial, 0)])
    while q:
        s, d = q.popleft()
        for m in naive_moves(s, separate):
            n = naive_apply(s, m)
            if n.cells in seen:
                continue
            if naive_goal(n, goal):
                return d + 1
            seen.add(n.cells)
            if len(seen) > limit:
                raise RuntimeError("BFS oracle limit reached")
            q.append((n, d + 1))
    return None


def random_small_instance(rng: np.random.Generator, rows: int = 2, cols: int = 3, max_tubes: int = 4):
    """Random state plus a random type-section goal over the same shape."""
    n = int(rng.integers(1, max_tubes + 1))
    cells = [EMPTY] * (rows * cols)
    for i in rng.choice(rows * cols, size=n, replace=False):
        cells[int(i)] = int(rng.integers(1, 3))
    state = RackState(((rows, cols),), (tuple(cells),))
    options = [None, frozenset({1}), frozenset({2}), frozenset(), frozenset({1, 2})]
    adm = tuple(options[int(rng.integers(len(options)))] for _ in range(rows * cols))
    return state, GoalPattern(((rows, cols),), (adm,))


# --- collision sampling oracle ----------------------------------------------


def inside_obstacles(world: WorldModel, pts: np.ndarray) -> bool:
    sc = world.scene
    if np.any(pts[:, 2] <= sc.table_z):
        return True
    for cyl in sc.cylinders:
        dxy = pts[:, :2] - cyl.center[:2]
        if np.any((np.einsum("ij,ij->i", dxy, dxy) < cyl.radius ** 2)
                  & (np.abs(pts[:, 2] - cyl.center[2]) < cyl.half_height)):
            return True
    for box in sc.boxes:
        if np.any(box.contains(pts)):
            return True
    return False


def sample_box(box: geo.Box, n: int, rng) -> np.ndarray:
    local = rng.uniform(-1.0, 1.0, size=(n, 3)) * box.half
    return box.center + local @ box.rotation.T


# --- perception builders and the naive clustering reference ----------------


def posed_world(state: RackState, pose, layout=None) -> WorldModel:
    from tuberack.rack import RackLayout
    from tuberack.world import GripperModel

    layout = (layout or RackLayout(*state.shapes[0])).with_pose(pose)
    return WorldModel((layout,), state, -65.0, GripperModel(), CATALOG)


def registration_state(rows: int, cols: int) -> RackState:
    """Every type present plus empties, cycling row-major."""
    cycle = [1, 2, EMPTY]
    return RackState(((rows, cols),), (tuple(cycle[i % 3] for i in range(rows * cols)),))


def random_occupancy(rng: np.random.Generator, rows: int, cols: int) -> RackState:
    return RackState(((rows, cols),), (tuple(int(v) for v in rng.integers(0, 3, size=rows * cols)),))


def naive_dbscan(pts: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Quadratic DBSCAN with the library's border rule, ids by first appearance."""
    n = len(pts)
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    nb = d2 <= eps * eps
    core = nb.sum(axis=1) >= min_pts
    comp = np.full(n, -1)
    nxt = 0
    for i in range(n):
        if not core[i] or comp[i] >= 0:
            continue
        comp[i] = nxt
        stack = [i]
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(nb[u] & core):
                if comp[v] < 0:
                    comp[v] = nxt
                    stack.append(int(v))
        nxt += 1
    raw = comp.copy()
    for i in range(n):
        if core[i]:
            continue
        cands = [j for j in range(n) if core[j] and nb[i, j]]
        if cands:
            j = min(cands, key=lambda j: (d2[i, j], *pts[j]))
            raw[i] = comp[j]
    out = np.full(n, -1)
    seen: dict[int, int] = {}
    for i, c in enumerate(raw):
        if c >= 0:
            out[i] = seen.setdefault(int(c), len(seen))
    return out


def random_cloud(rng: np.random.Generator, n_max: int = 500) -> np.ndarray:
    """A few Gaussian blobs over a uniform background."""
    n = int(rng.integers(20, n_max + 1))
    k = int(rng.integers(1, 5))
    centres = rng.uniform(0, 100, size=(k, 3))
    n_bg = int(rng.integers(0, n // 4 + 1))
    blob = centres[rng.integers(k, size=n - n_bg)] + rng.normal(0, 3.0, size=(n - n_bg, 3))
    return np.vstack([blob, rng.uniform(-10, 110, size=(n_bg, 3))])
