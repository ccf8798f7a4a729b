from __future__ import annotations

import math

import numpy as np

from helpers import CATALOG, inside_obstacles, sample_box
from tuberack import geometry as geo
from tuberack.rack import RackLayout, RackState
from tuberack.transforms import rot_z, rpy_matrix
from tuberack.world import (
    Config,
    GripperModel,
    WorldModel,
    _general_hits,
    _upright_hits,
    collision_free,
    gripper_bodies,
)


def _box(c, yaw, half):
    return geo.Box(np.asarray(c, float), rot_z(yaw), np.asarray(half, float))


def _cyl(x, y, r, z0, z1):
    return geo.Cylinder(np.array([x, y, (z0 + z1) / 2]), np.array([0.0, 0.0, 1.0]), r, (z1 - z0) / 2)


def test_gjk_separated_boxes_distance():
    a = _box([0, 0, 0], 0.0, [1, 1, 1])
    b = _box([5, 0, 0], 0.0, [1, 1, 1])
    assert math.isclose(geo.gjk_distance(a, b), 3.0, abs_tol=1e-6)
    assert geo.gjk_distance(a, _box([1.5, 0, 0], 0.3, [1, 1, 1])) == 0.0


def test_gjk_cylinder_distance():
    a = _cyl(0, 0, 2.0, -1, 1)
    b = _cyl(10, 0, 3.0, -1, 1)
    assert math.isclose(geo.gjk_distance(a, b), 5.0, abs_tol=1e-5)


def test_upright_tests_agree_with_gjk():
    rng = np.random.default_rng(0)
    for _ in range(400):
        c = rng.uniform(-15, 15, 3)
        yaw = rng.uniform(-math.pi, math.pi)
        half = rng.uniform(0.5, 8, 3)
        box = _box(c, yaw, half)
        cx, cy = rng.uniform(-15, 15, 2)
        r = rng.uniform(0.5, 6)
        z0 = rng.uniform(-20, 5)
        z1 = z0 + rng.uniform(1, 20)
        cyl = _cyl(cx, cy, r, z0, z1)
        d = geo.gjk_distance(box, cyl)
        fast = geo.upright_box_vs_cylinders(c, (math.cos(yaw), math.sin(yaw)), half, np.array([cx]), np.array([cy]),
                                            np.array([r]), np.array([z0]), np.array([z1]))
        if not 0.0 < d < 1e-6:  # skip grazing contact
            assert fast == (d == 0.0), (d, fast)

        oc = rng.uniform(-15, 15, 3)
        oyaw = rng.uniform(-math.pi, math.pi)
        ohalf = rng.uniform(0.5, 8, 3)
        other = _box(oc, oyaw, ohalf)
        d2 = geo.gjk_distance(box, other)
        fast2 = geo.upright_box_vs_boxes(c, (math.cos(yaw), math.sin(yaw)), half, np.array([oc[0]]),
                                         np.array([oc[1]]), np.array([oc[2]]), np.array([math.cos(oyaw)]),
                                         np.array([math.sin(oyaw)]), np.array([ohalf[0]]), np.array([ohalf[1]]),
                                         np.array([ohalf[2]]))
        if not 0.0 < d2 < 1e-6:
            assert fast2 == (d2 == 0.0), (d2, fast2)


# --- point-sampling oracle -------------------------------------------------


def _random_world(rng: np.random.Generator) -> WorldModel:
    cells = [int(v) for v in rng.integers(0, 3, size=6)]
    state = RackState(((2, 3),), (tuple(cells),))
    return WorldModel((RackLayout(2, 3),), state, -65.0, GripperModel(), CATALOG)


def _analytic(world, bodies) -> bool:
    sc = world.scene
    for b in bodies:
        if b.aabb()[0][2] <= sc.table_z:
            return True
        for o in list(sc.cylinders) + list(sc.boxes):
            if geo.intersects(b, o):
                return True
    return False


def test_collision_free_agrees_with_sampling_oracle():
    rng = np.random.default_rng(11)
    checked = hits = 0
    attempts = 0
    while checked < 100:
        attempts += 1
        assert attempts < 5000
        world = _random_world(rng)
        upright = checked % 2 == 0
        q = Config(rng.uniform(-15, 55), rng.uniform(-15, 35), rng.uniform(5, 80), rng.uniform(-math.pi, math.pi),
                   0.0 if upright else rng.uniform(-0.4, 0.4), 0.0 if upright else rng.uniform(-0.4, 0.4))
        half_gap = world.gripper.max_open_mm / 2.0
        bodies = gripper_bodies(world.gripper, q, half_gap)
        shrunk = [geo.Box(b.center, b.rotation, b.half - 1.0) for b in bodies]
        # skip grazing contacts thinner than the sampler's resolution
        if _analytic(world, bodies) != _analytic(world, shrunk):
            continue
        pts = np.vstack([sample_box(b, 10_000, rng) for b in bodies])
        sampled_hit = inside_obstacles(world, pts)
        assert collision_free(world, q) == (not sampled_hit), (q, world.state)
        hits += sampled_hit
        checked += 1
    assert 20 < hits < 80  # both outcomes exercised


def test_upright_fast_path_matches_general_path():
    rng = np.random.default_rng(12)
    for _ in range(300):
        world = _random_world(rng)
        q = Config(rng.uniform(-15, 55), rng.uniform(-15, 35), rng.uniform(5, 80), rng.uniform(-math.pi, math.pi))
        half_gap = world.gripper.max_open_mm / 2.0
        assert _upright_hits(world, q, None, half_gap) == _general_hits(world, q, None, half_gap)


def test_high_and_low_gripper():
    rng = np.random.default_rng(13)
    world = _random_world(rng)
    assert collision_free(world, Config(20.0, 10.0, 500.0))
    g = world.gripper
    assert not collision_free(world, Config(300.0, 300.0, world.table_z_mm - 1.0 + g.pad_mm))


def test_gripper_bodies_rotate_with_config():
    g = GripperModel()
    q = Config(0.0, 0.0, 0.0, 0.4, 0.1, -0.2)
    R = rpy_matrix(0.4, 0.1, -0.2)
    bodies = gripper_bodies(g, q, 10.0)
    assert all(np.allclose(b.rotation, R) for b in bodies)
    assert math.isclose(float(np.linalg.norm(bodies[0].center - bodies[1].center)),
                        2 * (10.0 + g.finger_thickness_mm / 2), rel_tol=1e-12)
