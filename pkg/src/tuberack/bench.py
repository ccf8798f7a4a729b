"""Lift-height benchmark: motion-planning workload against linear segment length."""

from __future__ import annotations

import dataclasses
import statistics
from dataclasses import dataclass

import numpy as np

from .orchestrator import CombinedPlan, plan_combined
from .scenario import Scenario
from .trace import EventKind

MOTION_STREAM = 2


@dataclass(frozen=True)
class BenchRow:
    lift_height_mm: float
    trials: int
    successes: int
    mean_iterations: float
    median_iterations: float
    mean_transit_length_mm: float | None  # over successful trials
    lift_blocked: int  # MotionPlan failures with reason LiftBlocked, all trials


@dataclass(frozen=True)
class BenchReport:
    rows: tuple[BenchRow, ...]
    ceiling_mm: float | None = None

    def to_dict(self) -> dict:
        return {"ceiling_mm": self.ceiling_mm, "rows": [dataclasses.asdict(r) for r in self.rows]}

    def table(self) -> str:
        head = "lift_mm\ttrials\tsuccesses\tmean_iters\tmedian_iters\tmean_transit_mm\tlift_blocked"
        lines = [head]
        for r in self.rows:
            tl = "" if r.mean_transit_length_mm is None else f"{r.mean_transit_length_mm:.3f}"
            lines.append(f"{r.lift_height_mm:g}\t{r.trials}\t{r.successes}\t{r.mean_iterations:.3f}\t"
                         f"{r.median_iterations:.3f}\t{tl}\t{r.lift_blocked}")
        return "\n".join(lines) + "\n"


def run_bench(scenario: Scenario, lift_heights: list[float], trials: int,
              ceiling_mm: float | None = None) -> BenchReport:
    """``trials`` seeded planner runs per lift height on the scenario's true state.

    Trial t draws motion randomness from ``default_rng([seed, 2, t])``, so
    every height sees the same seed set. Iterations per trial sum every
    MotionPlan attempt, failed attempts included.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not lift_heights:
        raise ValueError("need at least one lift height")
    gripper = scenario.gripper if ceiling_mm is None else scenario.gripper.with_ceiling(ceiling_mm)
    base = dataclasses.replace(scenario, gripper=gripper)
    world = base.world()
    weight = world.gripper.finger_length_mm  # mm per radian in the config metric
    rows = []
    for h in lift_heights:
        cfg = dataclasses.replace(base.planner_config(), motion=dataclasses.replace(base.motion, lift_height_mm=h))
        iters, lengths = [], []
        succ = blocked = 0
        for t in range(trials):
            rng = np.random.default_rng([scenario.seed, MOTION_STREAM, t])
            plan, trace = plan_combined(world, scenario.goal, cfg, rng)
            mps = trace.of_kind(EventKind.MOTION_PLAN)
            iters.append(sum(e.payload["iterations"] for e in mps))
            blocked += sum(1 for e in mps if e.reason == "LiftBlocked")
            if isinstance(plan, CombinedPlan):
                succ += 1
                lengths.append(sum(s.trajectory.transit_length(weight) for s in plan.steps))
        rows.append(BenchRow(float(h), trials, succ, float(np.mean(iters)), float(statistics.median(iters)),
                             float(np.mean(lengths)) if lengths else None, blocked))
    return BenchReport(tuple(rows), ceiling_mm)
