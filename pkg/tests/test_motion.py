from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import CATALOG
from tuberack.grasp import candidate_grasps, reason_config_pairs
from tuberack.motion import (
    MotionFailure,
    MotionParams,
    config_distance,
    interpolate,
    lift_length,
    plan_pick_place,
    plan_transit,
    project_upright,
    validate_trajectory,
)
from tuberack.rack import HoleCoord, MoveAction, RackLayout, RackState
from tuberack.world import Config, GripperModel, Obstacle, WorldModel, config_valid

A, B = CATALOG
W = GripperModel().finger_length_mm


def H(r, c, k=0):
    return HoleCoord(k, r, c)


def world_of(grid, obstacles=(), gripper=None):
    lay = RackLayout(len(grid), len(grid[0]))
    return WorldModel((lay,), RackState.from_grids([grid]), -65.0, gripper or GripperModel(), CATALOG,
                      tuple(obstacles))


def test_project_upright_examples():
    q = Config(1.0, 2.0, 3.0, 0.5, 0.3, -0.1)
    assert project_upright(q) == Config(1.0, 2.0, 3.0, 0.5, 0.0, 0.0)
    up = Config(1.0, 2.0, 3.0, 0.5)
    assert project_upright(up) == up


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(finite, finite, finite, st.floats(-3, 3), st.floats(-1, 1), st.floats(-1, 1))
def test_project_upright_idempotent(x, y, z, yaw, pitch, roll):
    q = Config(x, y, z, yaw, pitch, roll)
    p = project_upright(q)
    assert project_upright(p) == p
    assert (p.x, p.y, p.z, p.yaw) == (x, y, z, yaw) and p.pitch == 0.0 and p.roll == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0.5, 20))
def test_interpolate_step_bound(dx, dy, step):
    a = Config(0.0, 0.0, 0.0)
    b = Config(dx, dy, 10.0, 1.0)
    pts = interpolate(a, b, step, W)
    assert pts[0] == a and pts[-1] == b
    assert all(config_distance(p, q, W) <= step + 1e-9 for p, q in zip(pts, pts[1:]))


def test_straight_line_transit():
    w = world_of([[0, 0, 0]])
    a, b = Config(0.0, 0.0, 150.0), Config(40.0, 0.0, 150.0, 0.3)
    res = plan_transit(w, a, b, A, MotionParams(), np.random.default_rng(0))
    assert res.path == (a, b) and res.iterations == 0


def test_start_equals_goal():
    w = world_of([[0, 0, 0]])
    a = Config(0.0, 0.0, 150.0)
    assert plan_transit(w, a, a, None, MotionParams(), np.random.default_rng(0)).path == (a,)


def _pocket(center, inner=30.0, wall=5.0):
    cx, cy, cz = center
    o = inner + wall
    return [
        Obstacle((cx + o, cy, cz), (wall, o + wall, o + wall)),
        Obstacle((cx - o, cy, cz), (wall, o + wall, o + wall)),
        Obstacle((cx, cy + o, cz), (o + wall, wall, o + wall)),
        Obstacle((cx, cy - o, cz), (o + wall, wall, o + wall)),
        Obstacle((cx, cy, cz + o), (o + wall, o + wall, wall)),
        Obstacle((cx, cy, cz - o), (o + wall, o + wall, wall)),
    ]


def test_pocketed_goal_fails_within_budget():
    goal = Config(100.0, 100.0, 200.0)
    # the pocket interior is larger than the gripper but sealed on all six sides
    w = world_of([[0, 0, 0]], _pocket((100.0, 100.0, 220.0), inner=70.0))
    assert config_valid(w, goal)
    params = MotionParams(max_iters=300)
    with pytest.raises(MotionFailure) as exc:
        plan_transit(w, Config(0.0, 0.0, 150.0), goal, None, params, np.random.default_rng(1))
    assert exc.value.reason == "BudgetExhausted"
    assert exc.value.iterations == 300


def _pair(w, m, n_yaw=2):
    return reason_config_pairs(w, m, candidate_grasps(w.tube(m.tube), n_yaw))[0]


def test_adjacent_holes_high_lift_is_straight():
    w = world_of([[1, 0, 0]])
    m = MoveAction(H(0, 0), H(0, 1), 1)
    params = MotionParams(lift_height_mm=60.0)
    traj = plan_pick_place(w, m, _pair(w, m), params, np.random.default_rng(0))
    assert abs(traj.transit_length(W) - 20.0) <= params.step_mm
    assert validate_trajectory(w, traj, params)
    top = traj.pick_lift[1]
    assert math.isclose(top.z - traj.pick_lift[0].z, lift_length(A, params))


def test_low_lift_over_tall_neighbour_detours():
    w = world_of([[1, 2, 0]])
    m = MoveAction(H(0, 0), H(0, 2), 1)
    params = MotionParams(lift_height_mm=0.0)
    traj = plan_pick_place(w, m, _pair(w, m), params, np.random.default_rng(0))
    assert traj.transit_length(W) > 40.0 + params.step_mm
    assert traj.iterations > 0
    assert validate_trajectory(w, traj, params)


def test_lift_blocked_by_obstacle_above_source():
    ob = Obstacle((0.0, 0.0, 110.0), (15.0, 15.0, 5.0))
    w = world_of([[1, 0, 0]], [ob])
    m = MoveAction(H(0, 0), H(0, 2), 1)
    with pytest.raises(MotionFailure) as exc:
        plan_pick_place(w, m, _pair(w, m), MotionParams(), np.random.default_rng(0))
    assert exc.value.reason == "LiftBlocked"


def test_ceiling_blocks_high_lift_only():
    g = GripperModel().with_ceiling(110.0)
    w = world_of([[1, 0, 0, 0]], gripper=g)
    m = MoveAction(H(0, 0), H(0, 3), 1)
    pair = _pair(w, m)
    with pytest.raises(MotionFailure) as exc:
        plan_pick_place(w, m, pair, MotionParams(lift_height_mm=60.0), np.random.default_rng(0))
    assert exc.value.reason == "LiftBlocked"
    traj = plan_pick_place(w, m, pair, MotionParams(lift_height_mm=5.0), np.random.default_rng(0))
    assert validate_trajectory(w, traj, MotionParams(lift_height_mm=5.0))


def test_teleported_config_invalidates():
    w = world_of([[1, 0, 2]])
    m = MoveAction(H(0, 0), H(0, 1), 1)
    params = MotionParams()
    traj = plan_pick_place(w, m, _pair(w, m), params, np.random.default_rng(0))
    assert validate_trajectory(w, traj, params)
    inside = Config(40.0, 0.0, 30.0)  # inside the tube at (0, 2)
    bad = dataclasses.replace(traj, transit=(traj.transit[0], inside, traj.transit[-1]))
    assert not validate_trajectory(w, bad, params)
    tilted = dataclasses.replace(traj, transit=tuple(dataclasses.replace(q, pitch=0.2) for q in traj.transit))
    assert not validate_trajectory(w, tilted, params)
    gap = dataclasses.replace(traj, transit=traj.transit[1:] if len(traj.transit) > 1 else ())
    assert not validate_trajectory(w, gap, params)


def _crowded_move():
    w = world_of([[1, 2, 0, 2, 0], [0, 2, 2, 0, 0]])
    return w, MoveAction(H(0, 0), H(0, 4), 1)


def test_smoothed_paths_valid_over_seeds():
    w, m = _crowded_move()
    params = MotionParams(lift_height_mm=5.0)
    pair = _pair(w, m)
    sampled = 0
    for seed in range(100):
        try:
            traj = plan_pick_place(w, m, pair, params, np.random.default_rng(seed))
        except MotionFailure as exc:
            assert exc.reason == "BudgetExhausted"
            continue
        sampled += traj.iterations > 0
        assert validate_trajectory(w, traj, params)
        assert all(q.pitch == 0.0 and q.roll == 0.0 for q in traj.waypoints())
    assert sampled > 50


def test_transit_deterministic_per_seed():
    w, m = _crowded_move()
    params = MotionParams(lift_height_mm=5.0)
    pair = _pair(w, m)
    a = plan_pick_place(w, m, pair, params, np.random.default_rng(9))
    b = plan_pick_place(w, m, pair, params, np.random.default_rng(9))
    assert a == b


def test_motion_params_validation():
    with pytest.raises(ValueError):
        MotionParams(lift_height_mm=-1.0)
    with pytest.raises(ValueError):
        MotionParams(step_mm=0.0)
