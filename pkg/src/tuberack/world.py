"""Planning scene: racks, resident tubes, table, gripper and configurations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from . import geometry as geo
from .rack import EMPTY, HoleCoord, RackLayout, RackState, TubeType, hole_world_pose
from .transforms import rpy_matrix

UPRIGHT_TOL = 1e-12


@dataclass(frozen=True)
class GripperModel:
    finger_length_mm: float = 45.0
    finger_width_mm: float = 10.0
    finger_thickness_mm: float = 6.0
    max_open_mm: float = 30.0
    clearance_mm: float = 2.0
    # fingertip extent below the grip point, palm slab above the fingers
    pad_mm: float = 6.0
    palm_height_mm: float = 15.0
    workspace: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (-200.0, -200.0, -100.0),
        (600.0, 600.0, 400.0),
    )
    yaw_range: tuple[float, float] = (-math.pi, math.pi)

    def __post_init__(self) -> None:
        lo, hi = self.workspace
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError("gripper workspace box is degenerate")
        if self.yaw_range[0] > self.yaw_range[1]:
            raise ValueError("yaw_range min exceeds max")

    def with_ceiling(self, z_max: float) -> GripperModel:
        lo, hi = self.workspace
        return replace(self, workspace=(lo, (hi[0], hi[1], z_max)))


@dataclass(frozen=True)
class Obstacle:
    """Static yawed box in world coordinates."""

    center: tuple[float, float, float]
    half: tuple[float, float, float]
    yaw: float = 0.0


@dataclass(frozen=True)
class Config:
    x: float
    y: float
    z: float
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.yaw, self.pitch, self.roll])

    @classmethod
    def from_array(cls, a: Sequence[float]) -> Config:
        return cls(*(float(v) for v in a))

    @property
    def upright(self) -> bool:
        return abs(self.pitch) <= UPRIGHT_TOL and abs(self.roll) <= UPRIGHT_TOL

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.z, self.yaw, self.pitch, self.roll]


@dataclass(frozen=True)
class Held:
    """A tube in the gripper, grasped ``grip_height_mm`` above its seated rack top."""

    tube: TubeType
    grip_height_mm: float

    @property
    def z_range(self) -> tuple[float, float]:
        """Tube bottom and top relative to the tool point."""
        t = self.tube
        return (t.protrusion_mm - t.height_mm - self.grip_height_mm, t.protrusion_mm - self.grip_height_mm)


def yaw_feasible(yaw: float, yaw_range: tuple[float, float]) -> bool:
    """Yaw reachable modulo pi (parallel-jaw symmetry)."""
    lo, hi = yaw_range
    if hi - lo >= math.pi:
        return True
    k_lo = math.ceil((lo - yaw) / math.pi - 1e-12)
    return yaw + k_lo * math.pi <= hi + 1e-12


@dataclass
class CollisionScene:
    """Flat arrays of resident tubes and static boxes, plus shape objects for the general path."""

    tube_cx: np.ndarray
    tube_cy: np.ndarray
    tube_r: np.ndarray
    tube_z0: np.ndarray
    tube_z1: np.ndarray
    box_c: np.ndarray  # (n, 3)
    box_cos: np.ndarray
    box_sin: np.ndarray
    box_half: np.ndarray  # (n, 3)
    table_z: float
    max_top: float
    cylinders: list[geo.Cylinder] = field(default_factory=list)
    boxes: list[geo.Box] = field(default_factory=list)


def rack_body_boxes(layout: RackLayout) -> list[tuple[tuple[float, float, float, float], tuple[float, float]]]:
    """Rack solid as boxes in the rack frame: ((xmin, xmax, ymin, ymax), (zmin, zmax))."""
    p, w = layout.pitch_mm, layout.hole_width_mm
    xmin, xmax, ymin, ymax = layout.footprint()
    d, b = layout.hole_depth_mm, layout.base_thickness_mm
    wall_z = (-d, 0.0)
    out = [((xmin, xmax, ymin, ymax), (-d - b, -d))]
    xs = [xmin] + [c * p + w / 2.0 for c in range(layout.cols)]
    xe = [-w / 2.0] + [(c + 1) * p - w / 2.0 for c in range(layout.cols - 1)] + [xmax]
    for a, e in zip(xs, xe):
        out.append(((a, e, ymin, ymax), wall_z))
    ys = [ymin] + [r * p + w / 2.0 for r in range(layout.rows)]
    ye = [-w / 2.0] + [(r + 1) * p - w / 2.0 for r in range(layout.rows - 1)] + [ymax]
    for a, e in zip(ys, ye):
        out.append(((xmin, xmax, a, e), wall_z))
    tx0, tx1, ty0, ty1 = layout.key_tab()
    out.append(((tx0, tx1, ty0, ty1), (-d - b, 0.0)))
    return out


@dataclass(frozen=True)
class WorldModel:
    layouts: tuple[RackLayout, ...]
    state: RackState
    table_z_mm: float
    gripper: GripperModel
    tube_catalog: tuple[TubeType, ...]
    obstacles: tuple[Obstacle, ...] = ()

    def __post_init__(self) -> None:
        if tuple(l.shape for l in self.layouts) != self.state.shapes:
            raise ValueError("rack state shapes do not match layouts")
        for l in self.layouts:
            if not l.base_pose.is_flat():
                raise ValueError("racks must lie flat (rotation about z only)")
            bottom = l.base_pose.translation[2] - l.hole_depth_mm - l.base_thickness_mm
            if self.table_z_mm > bottom + 1e-9:
                raise ValueError("table must lie below every rack base")

    @cached_property
    def tubes_by_id(self) -> dict[int, TubeType]:
        return {t.id: t for t in self.tube_catalog}

    def tube(self, tube_id: int) -> TubeType:
        return self.tubes_by_id[tube_id]

    def with_state(self, state: RackState) -> WorldModel:
        w = WorldModel(self.layouts, state, self.table_z_mm, self.gripper, self.tube_catalog, self.obstacles)
        if "static_boxes" in self.__dict__:
            w.__dict__["static_boxes"] = self.__dict__["static_boxes"]
        return w

    def rack_top_z(self, rack: int) -> float:
        return float(self.layouts[rack].base_pose.translation[2])

    def hole_position(self, c: HoleCoord) -> np.ndarray:
        return hole_world_pose(self.layouts[c.rack], c)[0]

    @cached_property
    def static_boxes(self) -> list[tuple[np.ndarray, float, np.ndarray]]:
        """(center, yaw, half extents) of every rack body box and obstacle, world frame."""
        out = []
        for layout in self.layouts:
            pose = layout.base_pose
            yaw = pose.yaw
            for (x0, x1, y0, y1), (z0, z1) in rack_body_boxes(layout):
                local = np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0, (z0 + z1) / 2.0])
                half = np.array([(x1 - x0) / 2.0, (y1 - y0) / 2.0, (z1 - z0) / 2.0])
                out.append((pose.apply(local), yaw, half))
        for ob in self.obstacles:
            out.append((np.array(ob.center, dtype=float), ob.yaw, np.array(ob.half, dtype=float)))
        return out

    @cached_property
    def scene(self) -> CollisionScene:
        cx, cy, r, z0, z1, cyls = [], [], [], [], [], []
        for h, tid in self.state.occupied():
            t = self.tube(tid)
            pos = self.hole_position(h)
            top = pos[2] + t.protrusion_mm
            bottom = top - t.height_mm
            cx.append(pos[0])
            cy.append(pos[1])
            r.append(t.radius_mm)
            z0.append(bottom)
            z1.append(top)
            cyls.append(geo.Cylinder(np.array([pos[0], pos[1], (top + bottom) / 2.0]),
                                     np.array([0.0, 0.0, 1.0]), t.radius_mm, t.height_mm / 2.0))
        sb = self.static_boxes
        box_c = np.array([b[0] for b in sb]).reshape(-1, 3)
        box_half = np.array([b[2] for b in sb]).reshape(-1, 3)
        yaws = np.array([b[1] for b in sb])
        boxes = [geo.Box(c, rpy_matrix(y, 0.0, 0.0), hh) for c, y, hh in sb]
        tops = list(z1) + list(box_c[:, 2] + box_half[:, 2])
        return CollisionScene(
            np.array(cx), np.array(cy), np.array(r), np.array(z0), np.array(z1),
            box_c, np.cos(yaws), np.sin(yaws), box_half,
            self.table_z_mm, max(tops) if tops else self.table_z_mm, cyls, boxes,
        )


def finger_half_gap(world: WorldModel, tube: TubeType | None) -> float:
    g = world.gripper
    if tube is None:
        return g.max_open_mm / 2.0
    return tube.radius_mm + g.clearance_mm


def _local_bodies(g: GripperModel, half_gap: float) -> list[tuple[np.ndarray, np.ndarray]]:
    th, w, L = g.finger_thickness_mm, g.finger_width_mm, g.finger_length_mm
    zc = -g.pad_mm + L / 2.0
    fh = np.array([th / 2.0, w / 2.0, L / 2.0])
    palm_c = np.array([0.0, 0.0, -g.pad_mm + L + g.palm_height_mm / 2.0])
    palm_h = np.array([half_gap + th, w / 2.0, g.palm_height_mm / 2.0])
    return [
        (np.array([half_gap + th / 2.0, 0.0, zc]), fh),
        (np.array([-(half_gap + th / 2.0), 0.0, zc]), fh),
        (palm_c, palm_h),
    ]


def gripper_bodies(g: GripperModel, q: Config, half_gap: float) -> list[geo.Box]:
    """Two finger boxes and the palm box, world frame."""
    R = rpy_matrix(q.yaw, q.pitch, q.roll)
    p = np.array([q.x, q.y, q.z])
    return [geo.Box(p + R @ c, R, h) for c, h in _local_bodies(g, half_gap)]


def held_tube_body(q: Config, held: Held) -> geo.Cylinder:
    R = rpy_matrix(q.yaw, q.pitch, q.roll)
    z0, z1 = held.z_range
    axis = R[:, 2]
    center = np.array([q.x, q.y, q.z]) + axis * ((z0 + z1) / 2.0)
    return geo.Cylinder(center, axis, held.tube.radius_mm, (z1 - z0) / 2.0)


def in_workspace(world: WorldModel, q: Config) -> bool:
    lo, hi = world.gripper.workspace
    if not (lo[0] <= q.x <= hi[0] and lo[1] <= q.y <= hi[1] and lo[2] <= q.z <= hi[2]):
        return False
    return yaw_feasible(q.yaw, world.gripper.yaw_range)


def collision_free(
    world: WorldModel,
    q: Config,
    holding: TubeType | None = None,
    grip_height_mm: float | None = None,
    half_gap: float | None = None,
) -> bool:
    """True if gripper (and held tube) touch no rack, resident tube, obstacle or the table."""
    held = None
    if holding is not None:
        gh = 0.5 * holding.protrusion_mm if grip_height_mm is None else grip_height_mm
        held = Held(holding, gh)
    if half_gap is None:
        half_gap = finger_half_gap(world, holding)
    sc = world.scene
    g = world.gripper
    if q.upright:
        low = q.z - g.pad_mm
        if held is not None:
            low = min(low, q.z + held.z_range[0])
        if low <= sc.table_z:
            return False
        if low >= sc.max_top:
            return True
        return not _upright_hits(world, q, held, half_gap)
    return not _general_hits(world, q, held, half_gap)


def _upright_hits(world: WorldModel, q: Config, held: Held | None, half_gap: float) -> bool:
    sc = world.scene
    cs = (math.cos(q.yaw), math.sin(q.yaw))
    p = np.array([q.x, q.y, q.z])
    R2 = np.array([[cs[0], -cs[1]], [cs[1], cs[0]]])
    bx, by, bz = sc.box_c[:, 0], sc.box_c[:, 1], sc.box_c[:, 2]
    hx, hy, hz = sc.box_half[:, 0], sc.box_half[:, 1], sc.box_half[:, 2]
    for c, h in _local_bodies(world.gripper, half_gap):
        center = p + np.array([*(R2 @ c[:2]), c[2]])
        if geo.upright_box_vs_cylinders(center, cs, h, sc.tube_cx, sc.tube_cy, sc.tube_r, sc.tube_z0, sc.tube_z1):
            return True
        if geo.upright_box_vs_boxes(center, cs, h, bx, by, bz, sc.box_cos, sc.box_sin, hx, hy, hz):
            return True
    if held is not None:
        z0, z1 = held.z_range
        r = held.tube.radius_mm
        if geo.upright_cylinder_vs_cylinders(q.x, q.y, r, q.z + z0, q.z + z1,
                                             sc.tube_cx, sc.tube_cy, sc.tube_r, sc.tube_z0, sc.tube_z1):
            return True
        if geo.upright_cylinder_vs_boxes(q.x, q.y, r, q.z + z0, q.z + z1,
                                         bx, by, bz, sc.box_cos, sc.box_sin, hx, hy, hz):
            return True
    return False


def _general_hits(world: WorldModel, q: Config, held: Held | None, half_gap: float) -> bool:
    sc = world.scene
    bodies: list[geo.Box | geo.Cylinder] = list(gripper_bodies(world.gripper, q, half_gap))
    if held is not None:
        bodies.append(held_tube_body(q, held))
    for body in bodies:
        lo, hi = body.aabb()
        if lo[2] <= sc.table_z:
            return True
        if lo[2] >= sc.max_top:
            continue
        for other in sc.cylinders:
            if geo.intersects(body, other):
                return True
        for other in sc.boxes:
            if geo.intersects(body, other):
                return True
    return False


def config_valid(world: WorldModel, q: Config, holding: TubeType | None = None,
                 grip_height_mm: float | None = None) -> bool:
    return in_workspace(world, q) and collision_free(world, q, holding, grip_height_mm)


def remove_tube(world: WorldModel, c: HoleCoord) -> WorldModel:
    return world.with_state(world.state.replace(((c, EMPTY),)))
