"""Simulated execution of combined plans with fault injection and recovery.

The true world is only observed through synthetic perception. After a
failed step, or when the post-plan perception does not show the goal, the
scene is re-perceived and the combined planner restarts from the believed
state with the weight map carried over.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .orchestrator import CombinedPlan, Exhausted, PlannerConfig, PlanStep, move_payload, plan_combined
from .perception import (
    ClassifierModel,
    PerceptionParams,
    SensorParams,
    flatten_pose,
    perceive,
    synth_cloud,
)
from .rack import EMPTY, GoalPattern, HoleCoord, MoveAction, RackState, is_goal
from .search import DIRECTIONS, WeightMap
from .trace import EventKind, PlanTrace, failure
from .world import WorldModel

log = logging.getLogger(__name__)


class FaultKind(enum.Enum):
    NOMINAL = "Nominal"
    SLIP = "Slip"
    OVERLOAD = "Overload"
    MISPLACE = "Misplace"
    EMPTY_PICK = "EmptyPick"
    PLACE_BLOCKED = "PlaceBlocked"


@dataclass(frozen=True)
class FaultConfig:
    p_slip: float = 0.0
    p_overload: float = 0.0
    p_misplace: float = 0.0
    # global step index (counted across replans) -> forced fault
    forced_faults: Mapping[int, FaultKind] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        ps = (self.p_slip, self.p_overload, self.p_misplace)
        if any(not 0.0 <= p <= 1.0 for p in ps) or sum(ps) > 1.0 + 1e-12:
            raise ValueError("fault probabilities must lie in [0, 1] and sum to at most 1")
        for k in self.forced_faults.values():
            if k not in (FaultKind.NOMINAL, FaultKind.SLIP, FaultKind.OVERLOAD, FaultKind.MISPLACE):
                raise ValueError(f"cannot force fault {k}")


@dataclass(frozen=True)
class StepResult:
    index: int
    move: MoveAction
    kind: FaultKind
    landed: HoleCoord | None = None  # where the tube ended up, if it moved

    @property
    def hardware_error(self) -> bool:
        return self.kind is FaultKind.OVERLOAD

    @property
    def nominal(self) -> bool:
        return self.kind is FaultKind.NOMINAL


@dataclass
class TrueWorld:
    """Mutable holder for the ground-truth scene."""

    world: WorldModel

    @property
    def state(self) -> RackState:
        return self.world.state


def _empty_neighbours(state: RackState, c: HoleCoord) -> list[HoleCoord]:
    rows, cols = state.shapes[c.rack]
    out = []
    for dr, dc in sorted(DIRECTIONS.values()):
        h = HoleCoord(c.rack, c.row + dr, c.col + dc)
        if 0 <= h.row < rows and 0 <= h.col < cols and state[h] == EMPTY:
            out.append(h)
    return out


def sample_fault(faults: FaultConfig, index: int, rng: np.random.Generator) -> FaultKind:
    u = rng.uniform()  # always drawn so forcing a fault does not shift later draws
    if index in faults.forced_faults:
        return faults.forced_faults[index]
    if u < faults.p_slip:
        return FaultKind.SLIP
    if u < faults.p_slip + faults.p_overload:
        return FaultKind.OVERLOAD
    if u < faults.p_slip + faults.p_overload + faults.p_misplace:
        return FaultKind.MISPLACE
    return FaultKind.NOMINAL


def execute_step(true: TrueWorld, step: PlanStep, faults: FaultConfig, rng: np.random.Generator,
                 index: int) -> StepResult:
    """Run one pick-and-place against the true scene, mutating it.

    A believed move whose source is empty (or holds another type) in the
    true scene is an ``EMPTY_PICK``; an occupied true destination is a
    ``PLACE_BLOCKED``. Neither changes the scene. Otherwise a fault is
    sampled: slip and overload leave the tube in its source, misplace
    drops it into a random empty 8-neighbour of the destination (or the
    destination itself when none is free).
    """
    m = step.move
    state = true.state
    kind = sample_fault(faults, index, rng)
    if state[m.src] != m.tube:
        return StepResult(index, m, FaultKind.EMPTY_PICK)
    if state[m.dst] != EMPTY:
        return StepResult(index, m, FaultKind.PLACE_BLOCKED)
    if kind in (FaultKind.SLIP, FaultKind.OVERLOAD):
        return StepResult(index, m, kind)
    landed = m.dst
    if kind is FaultKind.MISPLACE:
        lifted = state.replace(((m.src, EMPTY),))
        spots = [h for h in _empty_neighbours(lifted, m.dst)]
        if spots:
            landed = spots[int(rng.integers(len(spots)))]
        else:
            kind = FaultKind.NOMINAL
    true.world = true.world.with_state(state.replace(((m.src, EMPTY), (landed, m.tube))))
    return StepResult(index, m, kind, landed)


@dataclass(frozen=True)
class RecoveryPolicy:
    max_replans: int = 3
    perceive_on_failure: bool = True

    def __post_init__(self) -> None:
        if self.max_replans < 0:
            raise ValueError("max_replans must be >= 0")


class OutcomeStatus(enum.Enum):
    SUCCESS = "Success"
    RECOVERY_EXHAUSTED = "RecoveryBudgetExhausted"
    PLANNING_EXHAUSTED = "PlanningExhausted"
    BELIEF_MISMATCH = "BeliefMismatch"  # perceived goal, true scene disagrees


@dataclass
class ExecutionOutcome:
    status: OutcomeStatus
    steps: list[StepResult]
    final_state: RackState
    replans_used: int
    detail: str = ""

    @property
    def success(self) -> bool:
        return self.status is OutcomeStatus.SUCCESS

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "success": self.success,
            "replans_used": self.replans_used,
            "detail": self.detail,
            "final_state": self.final_state.grids(),
            "steps": [{"index": s.index, "move": move_payload(s.move), "kind": s.kind.value,
                       "landed": list(s.landed) if s.landed is not None else None} for s in self.steps],
        }


@dataclass(frozen=True)
class Streams:
    """Independent generators so one subsystem's draws never shift another's."""

    perception: np.random.Generator
    motion: np.random.Generator
    faults: np.random.Generator

    STREAM_IDS = {"perception": 1, "motion": 2, "faults": 3}

    @classmethod
    def from_seed(cls, seed: int) -> Streams:
        ids = cls.STREAM_IDS
        return cls(*(np.random.default_rng([seed, ids[name]]) for name in ("perception", "motion", "faults")))


def believed_world(true_world: WorldModel, state: RackState, transforms) -> WorldModel:
    """Planner's view: perceived occupancy and flattened rack poses, the known table and gripper."""
    layouts = tuple(l.with_pose(flatten_pose(T)) for l, T in zip(true_world.layouts, transforms))
    bottom = min(l.base_pose.translation[2] - l.hole_depth_mm - l.base_thickness_mm for l in layouts)
    return WorldModel(layouts, state, min(true_world.table_z_mm, bottom), true_world.gripper,
                      true_world.tube_catalog, true_world.obstacles)


def run_with_recovery(
    true_world: WorldModel,
    goal: GoalPattern,
    config: PlannerConfig,
    faults: FaultConfig,
    policy: RecoveryPolicy,
    sensor: SensorParams,
    model: ClassifierModel,
    streams: Streams,
    perception: PerceptionParams = PerceptionParams(),
) -> tuple[ExecutionOutcome, PlanTrace]:
    true = TrueWorld(true_world)
    trace = PlanTrace()
    wm = WeightMap(state_conditioned=config.state_conditioned_weights)
    results: list[StepResult] = []
    replans = 0
    step_index = 0

    def look() -> WorldModel:
        cloud = synth_cloud(true.world, sensor, streams.perception)
        p = perceive(cloud, true.world.layouts, model, perception)
        return believed_world(true.world, p.state, p.transforms)

    belief = look()
    while True:
        plan, trace = plan_combined(belief, goal, config, streams.motion, wm, trace)
        if isinstance(plan, Exhausted):
            return ExecutionOutcome(OutcomeStatus.PLANNING_EXHAUSTED, results, true.state, replans, plan.reason), trace
        fault: StepResult | None = None
        executed = belief.state
        for step in plan.steps:
            r = execute_step(true, step, faults, streams.faults, step_index)
            step_index += 1
            results.append(r)
            log.debug("step %d %s: %s", r.index, r.move, r.kind.value)
            if not r.nominal:
                fault = r
                break
            executed = executed.replace(((step.move.src, EMPTY), (step.move.dst, step.move.tube)))
        if fault is None:
            belief = look()
            if is_goal(belief.state, goal):
                status = OutcomeStatus.SUCCESS if is_goal(true.state, goal) else OutcomeStatus.BELIEF_MISMATCH
                return ExecutionOutcome(status, results, true.state, replans), trace
            reason = "Divergence"
        else:
            reason = fault.kind.value
        if replans >= policy.max_replans:
            return ExecutionOutcome(OutcomeStatus.RECOVERY_EXHAUSTED, results, true.state, replans, reason), trace
        replans += 1
        payload = {"replan": replans}
        if fault is not None:
            payload.update(step=fault.index, move=move_payload(fault.move), hardware_error=fault.hardware_error)
        trace.emit(f"RC{trace.tp_count}", EventKind.RECOVERY, failure(reason), **payload)
        if fault is not None:
            belief = look() if policy.perceive_on_failure else belief.with_state(executed)
