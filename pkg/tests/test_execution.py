from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from helpers import scenario
from tuberack.cli import default_registration, register_model
from tuberack.execution import (
    FaultConfig,
    FaultKind,
    OutcomeStatus,
    RecoveryPolicy,
    Streams,
    TrueWorld,
    execute_step,
    run_with_recovery,
    sample_fault,
)
from tuberack.orchestrator import plan_combined
from tuberack.rack import EMPTY, is_goal
from tuberack.scenario import load_scenario
from tuberack.trace import EventKind, check_grammar

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def _plan(s):
    plan, _ = plan_combined(s.world(), s.goal, s.planner_config(), np.random.default_rng(0))
    return plan


def _two_step():
    s = scenario([["A . . B"]], [[". A B ."]])
    plan = _plan(s)
    assert len(plan) == 2
    return s, plan


def test_nominal_step_applies_move():
    s, plan = _two_step()
    true = TrueWorld(s.world())
    r = execute_step(true, plan.steps[0], FaultConfig(), np.random.default_rng(0), 0)
    assert r.kind is FaultKind.NOMINAL and r.landed == plan.steps[0].move.dst
    assert true.state[plan.steps[0].move.dst] == plan.steps[0].move.tube


def test_forced_overload_leaves_tube_in_source():
    s, plan = _two_step()
    true = TrueWorld(s.world())
    faults = FaultConfig(forced_faults={1: FaultKind.OVERLOAD})
    rng = np.random.default_rng(0)
    execute_step(true, plan.steps[0], faults, rng, 0)
    before = true.state
    r = execute_step(true, plan.steps[1], faults, rng, 1)
    assert r.kind is FaultKind.OVERLOAD and r.hardware_error
    assert true.state == before


def test_slip_frequency():
    faults = FaultConfig(p_slip=0.2)
    rng = np.random.default_rng(3)
    n = 10_000
    slips = sum(sample_fault(faults, i, rng) is FaultKind.SLIP for i in range(n))
    assert abs(slips / n - 0.2) <= 0.02


def test_forcing_does_not_shift_later_draws():
    a = FaultConfig(p_slip=0.5)
    b = FaultConfig(p_slip=0.5, forced_faults={0: FaultKind.OVERLOAD})
    ra, rb = np.random.default_rng(1), np.random.default_rng(1)
    ka = [sample_fault(a, i, ra) for i in range(20)]
    kb = [sample_fault(b, i, rb) for i in range(20)]
    assert kb[0] is FaultKind.OVERLOAD and ka[1:] == kb[1:]


def test_misplace_lands_next_to_destination():
    s = scenario([["A . . .", ". . . ."]], [[". . . A", "* * * *"]])
    plan = _plan(s)
    true = TrueWorld(s.world())
    m = plan.steps[0].move
    r = execute_step(true, plan.steps[0], FaultConfig(p_misplace=1.0), np.random.default_rng(0), 0)
    assert r.kind is FaultKind.MISPLACE and r.landed != m.dst
    assert max(abs(r.landed.row - m.dst.row), abs(r.landed.col - m.dst.col)) == 1
    assert true.state[r.landed] == m.tube and true.state[m.src] == EMPTY


def test_truth_conserved_under_every_fault():
    s = scenario([["A B . A", ". A B .", "B . . A"]], [["A A B B", "A A B B", "A A B B"]])
    plan = _plan(s)
    counts = s.initial.tube_counts()
    for seed in range(10):
        true = TrueWorld(s.world())
        faults = FaultConfig(p_slip=0.2, p_overload=0.2, p_misplace=0.3)
        rng = np.random.default_rng(seed)
        for i, step in enumerate(plan.steps):
            execute_step(true, step, faults, rng, i)
            assert true.state.tube_counts() == counts


def test_empty_pick_and_blocked_place_change_nothing():
    s, plan = _two_step()
    w = s.world()
    step = plan.steps[0]
    gone = TrueWorld(w.with_state(w.state.replace(((step.move.src, EMPTY),))))
    before = gone.state
    assert execute_step(gone, step, FaultConfig(), np.random.default_rng(0), 0).kind is FaultKind.EMPTY_PICK
    assert gone.state == before
    full = TrueWorld(w.with_state(w.state.replace(((step.move.dst, 2),))))
    before = full.state
    assert execute_step(full, step, FaultConfig(), np.random.default_rng(0), 0).kind is FaultKind.PLACE_BLOCKED
    assert full.state == before


def _run(s, faults=None, policy=None):
    model = register_model(s, s.registration or default_registration(s))
    return run_with_recovery(s.world(), s.goal, s.planner_config(), faults or s.faults, policy or s.recovery,
                             s.sensor, model, Streams.from_seed(s.seed), s.perception)


def test_zero_faults_succeeds_without_replans():
    s = load_scenario(SCENARIOS / "crowded_4x6.json")
    out, trace = _run(s, FaultConfig())
    assert out.status is OutcomeStatus.SUCCESS and out.replans_used == 0
    assert is_goal(out.final_state, s.goal)
    assert not trace.of_kind(EventKind.RECOVERY)
    check_grammar(trace.events)


def test_forced_overload_recovers_once():
    s = load_scenario(SCENARIOS / "overload.json")
    out, trace = _run(s)
    assert out.success and is_goal(out.final_state, s.goal)
    rc = trace.of_kind(EventKind.RECOVERY)
    assert len(rc) == 1
    ids = [e.id for e in trace]
    after = ids[ids.index(rc[0].id) + 1]
    assert after == f"TP{int(rc[0].id[2:]) + 1}"
    check_grammar(trace.events)


def test_forced_overload_without_budget_fails():
    s = load_scenario(SCENARIOS / "overload.json")
    out, trace = _run(s, policy=RecoveryPolicy(max_replans=0))
    assert out.status is OutcomeStatus.RECOVERY_EXHAUSTED and not out.success
    assert not is_goal(out.final_state, s.goal)


def test_execution_deterministic():
    s = load_scenario(SCENARIOS / "overload.json")
    a, ta = _run(s)
    b, tb = _run(s)
    assert a.to_dict() == b.to_dict() and ta.dumps() == tb.dumps()


def test_fault_config_validation():
    with pytest.raises(ValueError):
        FaultConfig(p_slip=0.7, p_overload=0.5)
    with pytest.raises(ValueError):
        FaultConfig(forced_faults={0: FaultKind.EMPTY_PICK})
    with pytest.raises(ValueError):
        RecoveryPolicy(max_replans=-1)
