"""Grasp candidates and their feasibility at pick and place holes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from .rack import EMPTY, HoleCoord, MoveAction, TubeType
from .world import Config, WorldModel, collision_free, finger_half_gap, in_workspace, remove_tube


class GraspError(ValueError):
    pass


class EmptyHeights(GraspError):
    pass


class HoleEmpty(GraspError):
    pass


class GraspFeasibility(enum.Enum):
    FREE = "free"
    COLLIDED = "collided"
    IK_INFEASIBLE = "ik_infeasible"


@dataclass(frozen=True)
class GraspCandidate:
    yaw: float
    grip_height_mm: float


@dataclass(frozen=True)
class ConfigPair:
    candidate: GraspCandidate
    pick_config: Config
    place_config: Config


def candidate_grasps(t: TubeType, n_yaw: int = 8, heights: Sequence[float] | None = None) -> list[GraspCandidate]:
    """``n_yaw`` yaws evenly spaced over [0, pi) for each grip height, yaw-major order.

    ``heights`` default to half the tube's protrusion above the rack.
    """
    if n_yaw < 1:
        raise ValueError("n_yaw must be >= 1")
    if heights is None:
        heights = [0.5 * t.protrusion_mm]
    if len(heights) == 0:
        raise EmptyHeights("at least one grip height is required")
    for h in heights:
        if not 0.0 < h < t.protrusion_mm:
            raise ValueError(f"grip height {h} outside (0, {t.protrusion_mm})")
    return [GraspCandidate(k * math.pi / n_yaw, float(h)) for k in range(n_yaw) for h in heights]


def candidates_from_fractions(t: TubeType, n_yaw: int, fractions: Sequence[float]) -> list[GraspCandidate]:
    return candidate_grasps(t, n_yaw, [f * t.protrusion_mm for f in fractions])


def grasp_config(world: WorldModel, c: HoleCoord, g: GraspCandidate) -> Config:
    pos = world.hole_position(c)
    yaw = world.layouts[c.rack].base_pose.yaw + g.yaw
    return Config(float(pos[0]), float(pos[1]), float(pos[2] + g.grip_height_mm), yaw, 0.0, 0.0)


def _classify(world_without: WorldModel, c: HoleCoord, tube: TubeType, g: GraspCandidate) -> tuple[GraspFeasibility, Config]:
    q = grasp_config(world_without, c, g)
    if not in_workspace(world_without, q):
        return GraspFeasibility.IK_INFEASIBLE, q
    if not collision_free(world_without, q, None, half_gap=finger_half_gap(world_without, tube)):
        return GraspFeasibility.COLLIDED, q
    return GraspFeasibility.FREE, q


def classify_grasp(world: WorldModel, c: HoleCoord, g: GraspCandidate) -> GraspFeasibility:
    """IK-infeasible, collided or free for grasping the tube seated at ``c``."""
    tid = world.state[c]
    if tid == EMPTY:
        raise HoleEmpty(f"no tube at {c}")
    return _classify(remove_tube(world, c), c, world.tube(tid), g)[0]


def reason_config_pairs(world: WorldModel, m: MoveAction, cands: Sequence[GraspCandidate]) -> list[ConfigPair]:
    """Candidates free at both the pick hole and the place hole, in candidate order.

    The place side is judged in the post-move state; with the moved tube
    itself excluded from both checks, both sides see the same scene: the
    current state minus the source tube.
    """
    tube = world.tube(m.tube)
    held_world = remove_tube(world, m.src)
    pairs = []
    for g in cands:
        f_pick, q_pick = _classify(held_world, m.src, tube, g)
        if f_pick is not GraspFeasibility.FREE:
            continue
        f_place, q_place = _classify(held_world, m.dst, tube, g)
        if f_place is GraspFeasibility.FREE:
            pairs.append(ConfigPair(g, q_pick, q_place))
    return pairs
