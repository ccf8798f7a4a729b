"""Combined task and motion planner with backward updates.

Task search proposes a logical sequence; each step is checked by grasp
reasoning and then by motion planning pair by pair. A grasp failure, or a
step whose every config pair fails motion planning, writes a weight-map
record for (state at that step, move) and restarts task search from the
current state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .grasp import ConfigPair, candidates_from_fractions, reason_config_pairs
from .motion import MotionFailure, MotionParams, Trajectory, plan_pick_place
from .rack import GoalPattern, MoveAction, RackState, apply_move
from .search import (
    BudgetExhausted,
    FilterBank,
    MoveConstraint,
    SearchStats,
    Unsolvable,
    WeightMap,
    default_filter_bank,
    record_failure,
    search,
)
from .trace import SUCCESS, EventKind, PlanTrace, failure
from .world import WorldModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerBudget:
    max_reexplorations: int = 64
    search_expansions: int = 1_000_000
    motion_iters: int = 3000

    def __post_init__(self) -> None:
        if self.max_reexplorations < 0 or self.search_expansions < 1 or self.motion_iters < 1:
            raise ValueError("planner budgets must be positive")


@dataclass(frozen=True)
class PlannerConfig:
    bank: FilterBank = field(default_factory=default_filter_bank)
    constraint: MoveConstraint = field(default_factory=MoveConstraint)
    motion: MotionParams = field(default_factory=MotionParams)
    budget: PlannerBudget = field(default_factory=PlannerBudget)
    n_yaw: int = 8
    grip_fractions: tuple[float, ...] = (0.5,)
    state_conditioned_weights: bool = True


@dataclass(frozen=True)
class PlanStep:
    move: MoveAction
    pair: ConfigPair
    trajectory: Trajectory


@dataclass(frozen=True)
class CombinedPlan:
    steps: tuple[PlanStep, ...] = ()

    def moves(self) -> list[MoveAction]:
        return [s.move for s in self.steps]

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class Exhausted:
    reason: str


def move_payload(m: MoveAction) -> dict:
    return {"src": list(m.src), "dst": list(m.dst), "tube": m.tube}


def replay(initial: RackState, plan: CombinedPlan) -> RackState:
    state = initial
    for step in plan.steps:
        state = apply_move(state, step.move)
    return state


def plan_combined(
    world: WorldModel,
    goal: GoalPattern,
    config: PlannerConfig,
    rng: np.random.Generator,
    wm: WeightMap | None = None,
    trace: PlanTrace | None = None,
    on_expand: Callable[[RackState, MoveAction], None] | None = None,
) -> tuple[CombinedPlan | Exhausted, PlanTrace]:
    wm = wm if wm is not None else WeightMap(state_conditioned=config.state_conditioned_weights)
    trace = trace if trace is not None else PlanTrace()
    motion = replace(config.motion, max_iters=config.budget.motion_iters)
    reexplorations = 0

    while True:
        k = trace.next_tp()
        stats = SearchStats()
        try:
            seq = search(world.state, goal, config.bank, config.constraint, wm,
                         config.budget.search_expansions, on_expand, stats)
        except Unsolvable:
            trace.emit(f"TP{k}", EventKind.TASK_PLAN, failure("Unsolvable"), expansions=stats.expansions)
            return Exhausted("Unsolvable"), trace
        except BudgetExhausted:
            trace.emit(f"TP{k}", EventKind.TASK_PLAN, failure("BudgetExhausted"), expansions=stats.expansions)
            return Exhausted("SearchBudgetExhausted"), trace
        trace.emit(f"TP{k}", EventKind.TASK_PLAN, SUCCESS, expansions=stats.expansions,
                   sequence=[move_payload(m) for m in seq], weight_map_size=len(wm))
        log.debug("TP%d: %d moves after %d expansions", k, len(seq), stats.expansions)

        scratch = world
        steps: list[PlanStep] = []
        failed = False
        for i, m in enumerate(seq):
            cands = candidates_from_fractions(world.tube(m.tube), config.n_yaw, config.grip_fractions)
            pairs = reason_config_pairs(scratch, m, cands)
            if not pairs:
                trace.emit(f"GR{k}.{i}", EventKind.GRASP_REASON, failure("NoCommonGrasp"),
                           move=move_payload(m), candidates=len(cands), pairs=0)
            else:
                trace.emit(f"GR{k}.{i}", EventKind.GRASP_REASON, SUCCESS,
                           move=move_payload(m), candidates=len(cands), pairs=len(pairs))
            traj = None
            for j, pair in enumerate(pairs):
                try:
                    traj = plan_pick_place(scratch, m, pair, motion, rng)
                except MotionFailure as exc:
                    trace.emit(f"MP{k}.{i}.{j}", EventKind.MOTION_PLAN, failure(exc.reason),
                               iterations=exc.iterations, yaw=round(pair.candidate.yaw, 9))
                    continue
                trace.emit(f"MP{k}.{i}.{j}", EventKind.MOTION_PLAN, SUCCESS, iterations=traj.iterations,
                           yaw=round(pair.candidate.yaw, 9), transit_points=len(traj.transit))
                break
            if traj is None:
                fp = scratch.state.fingerprint
                record_failure(wm, fp, m)
                trace.emit(f"WM{k}.{i}", EventKind.WEIGHT_MAP_UPDATE, SUCCESS,
                           fingerprint=f"{fp:016x}", move=move_payload(m), size=len(wm))
                reexplorations += 1
                if reexplorations > config.budget.max_reexplorations:
                    return Exhausted("MaxReexplorations"), trace
                trace.emit(f"RE{k}", EventKind.RE_EXPLORATION, SUCCESS, count=reexplorations)
                failed = True
                break
            steps.append(PlanStep(m, pair, traj))
            scratch = scratch.with_state(apply_move(scratch.state, m))
        if not failed:
            return CombinedPlan(tuple(steps)), trace
