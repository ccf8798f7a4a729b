"""Constrained motion planning for a single pick-and-place.

A move is a vertical lift out of the source hole, a sampled transit with
the tube held upright, and a vertical insertion into the destination hole.
The transit planner is RRT-connect over (x, y, z, yaw, pitch, roll) where
every sample is projected onto pitch = roll = 0 while a tube is held.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grasp import ConfigPair
from .rack import MoveAction, TubeType
from .transforms import wrap_angle
from .world import (
    Config,
    WorldModel,
    collision_free,  # noqa: F401  (re-exported)
    config_valid,
    remove_tube,
)

__all__ = [
    "MotionParams", "MotionFailure", "Trajectory", "TransitResult",
    "collision_free", "project_upright", "plan_transit", "plan_pick_place",
    "validate_trajectory", "config_distance", "interpolate", "lift_length",
]


@dataclass(frozen=True)
class MotionParams:
    lift_height_mm: float = 60.0
    step_mm: float = 5.0
    max_iters: int = 3000
    tilt_eps_rad: float = 0.0
    shortcut_passes: int = 30
    # free-flying samples (no tube held) draw pitch/roll from +-tilt_sample_rad
    tilt_sample_rad: float = math.pi / 6.0
    sample_margin_mm: float = 120.0

    def __post_init__(self) -> None:
        if self.lift_height_mm < 0 or self.step_mm <= 0 or self.tilt_eps_rad < 0:
            raise ValueError("invalid motion parameters")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


class MotionFailure(Exception):
    def __init__(self, reason: str, iterations: int = 0):
        super().__init__(reason)
        self.reason = reason
        self.iterations = iterations


@dataclass(frozen=True)
class TransitResult:
    path: tuple[Config, ...]
    iterations: int


@dataclass(frozen=True)
class Trajectory:
    move: MoveAction
    holding: int
    grip_height_mm: float
    pick_lift: tuple[Config, Config]
    transit: tuple[Config, ...]
    place_insert: tuple[Config, Config]
    iterations: int = 0

    def transit_length(self, weight: float) -> float:
        return sum(config_distance(a, b, weight) for a, b in zip(self.transit, self.transit[1:]))

    def waypoints(self) -> list[Config]:
        return [*self.pick_lift, *self.transit[1:], *self.place_insert[1:]]


def project_upright(q: Config) -> Config:
    if q.pitch == 0.0 and q.roll == 0.0:
        return q
    return Config(q.x, q.y, q.z, q.yaw, 0.0, 0.0)


def config_distance(a: Config, b: Config, weight: float) -> float:
    """Euclidean in mm with angular terms scaled by ``weight`` mm/rad."""
    dyaw = wrap_angle(b.yaw - a.yaw)
    return math.sqrt(
        (b.x - a.x) ** 2 + (b.y - a.y) ** 2 + (b.z - a.z) ** 2
        + weight * weight * (dyaw * dyaw + (b.pitch - a.pitch) ** 2 + (b.roll - a.roll) ** 2)
    )


def _lerp(a: Config, b: Config, s: float) -> Config:
    dyaw = wrap_angle(b.yaw - a.yaw)
    return Config(
        a.x + s * (b.x - a.x), a.y + s * (b.y - a.y), a.z + s * (b.z - a.z),
        wrap_angle(a.yaw + s * dyaw), a.pitch + s * (b.pitch - a.pitch), a.roll + s * (b.roll - a.roll),
    )


def interpolate(a: Config, b: Config, step: float, weight: float) -> list[Config]:
    """Endpoints plus evenly spaced intermediates no more than ``step`` apart."""
    n = max(1, math.ceil(config_distance(a, b, weight) / step - 1e-9))
    return [a] + [_lerp(a, b, i / n) for i in range(1, n)] + [b]


def _weight(world: WorldModel) -> float:
    return world.gripper.finger_length_mm


def _segment_ok(world, a, b, tube, grip, params, skip_first=False) -> bool:
    pts = interpolate(a, b, params.step_mm, _weight(world))
    if skip_first:
        pts = pts[1:]
    for q in pts:
        if tube is not None and max(abs(q.pitch), abs(q.roll)) > params.tilt_eps_rad:
            return False
        if not config_valid(world, q, tube, grip):
            return False
    return True


def _sample_box(world: WorldModel, params: MotionParams) -> tuple[np.ndarray, np.ndarray]:
    """Workspace clipped to the scene's neighborhood."""
    lo, hi = (np.array(v, dtype=float) for v in world.gripper.workspace)
    sc = world.scene
    xy = []
    for layout in world.layouts:
        x0, x1, y0, y1 = layout.footprint()
        corners = np.array([[x0, y0, 0], [x0, y1, 0], [x1, y0, 0], [x1, y1, 0]], dtype=float)
        xy.append(layout.base_pose.apply(corners)[:, :2])
    xy = np.vstack(xy)
    m = params.sample_margin_mm
    slo = np.array([xy[:, 0].min() - m, xy[:, 1].min() - m, sc.table_z])
    shi = np.array([xy[:, 0].max() + m, xy[:, 1].max() + m, sc.max_top + m + world.gripper.finger_length_mm])
    return np.maximum(lo, slo), np.minimum(hi, shi)


class _Tree:
    def __init__(self, root: np.ndarray):
        self.nodes = np.zeros((64, 6))
        self.nodes[0] = root
        self.parent = [-1]
        self.n = 1

    def add(self, q: np.ndarray, parent: int) -> int:
        if self.n == len(self.nodes):
            self.nodes = np.vstack([self.nodes, np.zeros_like(self.nodes)])
        self.nodes[self.n] = q
        self.parent.append(parent)
        self.n += 1
        return self.n - 1

    def nearest(self, q: np.ndarray, weight: float) -> int:
        d = self.nodes[: self.n] - q
        d[:, 3] = (d[:, 3] + math.pi) % (2.0 * math.pi) - math.pi
        d[:, 3:] *= weight
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))

    def branch(self, i: int) -> list[np.ndarray]:
        out = []
        while i != -1:
            out.append(self.nodes[i].copy())
            i = self.parent[i]
        return out


def plan_transit(
    world: WorldModel,
    start: Config,
    goal: Config,
    holding: TubeType | None,
    params: MotionParams,
    rng: np.random.Generator,
    grip_height_mm: float | None = None,
) -> TransitResult:
    """RRT-connect between two valid configs, straight line tried first.

    Raises ``MotionFailure("BudgetExhausted")`` after ``params.max_iters``
    sampling iterations.
    """
    w = _weight(world)
    upright = holding is not None
    if upright and (not start.upright or not goal.upright):
        raise MotionFailure("NotUpright")
    if not config_valid(world, start, holding, grip_height_mm):
        raise MotionFailure("StartInvalid")
    if not config_valid(world, goal, holding, grip_height_mm):
        raise MotionFailure("GoalInvalid")
    if config_distance(start, goal, w) == 0.0:
        return TransitResult((start,), 0)
    if _segment_ok(world, start, goal, holding, grip_height_mm, params):
        return TransitResult((start, goal), 0)

    lo, hi = _sample_box(world, params)
    ylo, yhi = world.gripper.yaw_range
    tilt = 0.0 if upright else params.tilt_sample_rad

    def valid(qa: np.ndarray) -> bool:
        return config_valid(world, Config.from_array(qa), holding, grip_height_mm)

    def steer(tree: _Tree, target: np.ndarray) -> tuple[str, int]:
        i = tree.nearest(target, w)
        a = tree.nodes[i]
        d = target - a
        d[3] = wrap_angle(d[3])
        dist = math.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2 + w * w * (d[3] ** 2 + d[4] ** 2 + d[5] ** 2))
        if dist <= params.step_mm:
            q = target.copy()
            status = "reached"
        else:
            q = a + d * (params.step_mm / dist)
            status = "advanced"
        q[3] = wrap_angle(q[3])
        if upright:
            q[4] = q[5] = 0.0
        if not valid(q):
            return "trapped", -1
        return status, tree.add(q, i)

    def connect(tree: _Tree, target: np.ndarray) -> tuple[str, int]:
        while True:
            status, j = steer(tree, target)
            if status != "advanced":
                return status, j

    ta, tb = _Tree(start.as_array()), _Tree(goal.as_array())
    a_is_start = True
    for it in range(1, params.max_iters + 1):
        sample = np.array([
            rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1]), rng.uniform(lo[2], hi[2]),
            rng.uniform(ylo, yhi), rng.uniform(-tilt, tilt), rng.uniform(-tilt, tilt),
        ])
        status, i_new = steer(ta, sample)
        if status == "trapped":
            ta, tb, a_is_start = tb, ta, not a_is_start
            continue
        status, j = connect(tb, ta.nodes[i_new])
        if status == "reached":
            pa = ta.branch(i_new)[::-1]
            pb = tb.branch(j)[1:]
            raw = pa + pb if a_is_start else (pa + pb)[::-1]
            path = [start] + [Config.from_array(q) for q in raw[1:-1]] + [goal]
            path = _shortcut(world, path, holding, grip_height_mm, params, rng)
            return TransitResult(tuple(path), it)
        ta, tb, a_is_start = tb, ta, not a_is_start
    raise MotionFailure("BudgetExhausted", params.max_iters)


def _shortcut(world, path: list[Config], holding, grip, params: MotionParams, rng) -> list[Config]:
    w = _weight(world)
    for _ in range(params.shortcut_passes):
        if len(path) < 3:
            break
        i, j = sorted(rng.choice(len(path), size=2, replace=False))
        if j - i < 2:
            continue
        old = sum(config_distance(a, b, w) for a, b in zip(path[i:j], path[i + 1:j + 1]))
        if config_distance(path[i], path[j], w) >= old:
            continue
        if _segment_ok(world, path[i], path[j], holding, grip, params, skip_first=True):
            path = path[: i + 1] + path[j:]
    return path


def lift_length(tube: TubeType, params: MotionParams) -> float:
    """Vertical travel until the tube bottom clears the rack top by ``lift_height_mm``."""
    return tube.height_mm - tube.protrusion_mm + params.lift_height_mm


def _raised(q: Config, dz: float) -> Config:
    return Config(q.x, q.y, q.z + dz, q.yaw, q.pitch, q.roll)


def plan_pick_place(
    world: WorldModel,
    m: MoveAction,
    pair: ConfigPair,
    params: MotionParams,
    rng: np.random.Generator,
) -> Trajectory:
    tube = world.tube(m.tube)
    grip = pair.candidate.grip_height_mm
    held_world = remove_tube(world, m.src)
    dz = lift_length(tube, params)
    pick_top = _raised(pair.pick_config, dz)
    place_top = _raised(pair.place_config, dz)
    if not _segment_ok(held_world, pair.pick_config, pick_top, tube, grip, params):
        raise MotionFailure("LiftBlocked")
    if not _segment_ok(held_world, place_top, pair.place_config, tube, grip, params):
        raise MotionFailure("InsertBlocked")
    res = plan_transit(held_world, pick_top, place_top, tube, params, rng, grip)
    return Trajectory(
        m, m.tube, grip, (pair.pick_config, pick_top), res.path, (place_top, pair.place_config), res.iterations,
    )


def validate_trajectory(world: WorldModel, t: Trajectory, params: MotionParams) -> bool:
    """Re-check continuity, collisions, workspace and the upright constraint at ``step_mm``.

    ``world`` is the scene before the move (tube still at its source).
    """
    tube = world.tube(t.holding)
    held_world = remove_tube(world, t.move.src)
    w = _weight(world)
    segments: Sequence[Sequence[Config]] = (t.pick_lift, t.transit, t.place_insert)
    if any(len(s) == 0 for s in segments):
        return False
    for a, b in ((t.pick_lift[-1], t.transit[0]), (t.transit[-1], t.place_insert[0])):
        if config_distance(a, b, w) > 1e-6:
            return False
    for seg in segments:
        if len(seg) == 1 and not _segment_ok(held_world, seg[0], seg[0], tube, t.grip_height_mm, params):
            return False
        for a, b in zip(seg, seg[1:]):
            if not _segment_ok(held_world, a, b, tube, t.grip_height_mm, params):
                return False
    return True
