"""Command line entry point: ``tuberack {plan,execute,register,bench,render,perceive}``.

Exit codes:
    0  success
    1  I/O error or invalid scenario
    2  planning exhausted, registration failed, or no rack perceived
    3  recovery budget exhausted, or the believed goal is not the true goal
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .bench import run_bench
from .execution import OutcomeStatus, Streams, run_with_recovery
from .orchestrator import CombinedPlan, Exhausted, move_payload, plan_combined, replay
from .perception import (
    ClassifierModel,
    MissingTypeExamples,
    PerceptionError,
    perceive,
    register_from_world,
    synth_cloud,
    write_xyz,
)
from .rack import EMPTY, RackState
from .render import render_svg
from .scenario import Scenario, ScenarioError, load_scenario
from .trace import load_trace

log = logging.getLogger("tuberack")

EXIT_OK = 0
EXIT_IO = 1
EXIT_EXHAUSTED = 2
EXIT_RECOVERY = 3

REGISTRATION_STREAM = 4

_STATUS_EXIT = {
    OutcomeStatus.SUCCESS: EXIT_OK,
    OutcomeStatus.PLANNING_EXHAUSTED: EXIT_EXHAUSTED,
    OutcomeStatus.RECOVERY_EXHAUSTED: EXIT_RECOVERY,
    OutcomeStatus.BELIEF_MISMATCH: EXIT_RECOVERY,
}


def exit_code(status: OutcomeStatus) -> int:
    return _STATUS_EXIT[status]


def default_registration(s: Scenario) -> RackState:
    """Registration rack cycling through the catalog with every (n+1)-th hole left empty."""
    ids = [t.id for t in sorted(s.tubes, key=lambda t: t.id)]
    cycle = [*ids, EMPTY]
    grids, i = [], 0
    for layout in s.layouts:
        rows = []
        for _ in range(layout.rows):
            rows.append([cycle[(i + c) % len(cycle)] for c in range(layout.cols)])
            i += layout.cols
        grids.append(rows)
    return RackState.from_grids(grids)


def register_model(s: Scenario, state: RackState) -> ClassifierModel:
    rng = np.random.default_rng([s.seed, REGISTRATION_STREAM])
    return register_from_world(s.world().with_state(state), s.sensor, s.perception, rng)


def _write(path: str | None, text: str) -> None:
    if path is None:
        return
    Path(path).write_text(text, encoding="utf-8")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def plan_to_dict(s: Scenario, plan: CombinedPlan | Exhausted) -> dict:
    if isinstance(plan, Exhausted):
        return {"seed": s.seed, "status": "Exhausted", "reason": plan.reason, "steps": []}
    steps = []
    for st in plan.steps:
        steps.append({
            "move": move_payload(st.move),
            "grasp": dataclasses.asdict(st.pair.candidate),
            "pick_config": st.pair.pick_config.to_list(),
            "place_config": st.pair.place_config.to_list(),
            "iterations": st.trajectory.iterations,
            "waypoints": [q.to_list() for q in st.trajectory.waypoints()],
        })
    return {"seed": s.seed, "status": "Success", "reason": None, "steps": steps,
            "final_state": replay(s.initial, plan).grids()}


def _scenario(args) -> Scenario:
    s = load_scenario(args.scenario)
    return s.with_seed(args.seed) if args.seed is not None else s


def cmd_plan(args) -> int:
    s = _scenario(args)
    rng = np.random.default_rng([s.seed, Streams.STREAM_IDS["motion"]])
    plan, trace = plan_combined(s.world(), s.goal, s.planner_config(), rng)
    _write(args.out, _dumps(plan_to_dict(s, plan)))
    _write(args.trace_out, trace.dumps())
    if isinstance(plan, Exhausted):
        log.warning("planning exhausted: %s", plan.reason)
        return EXIT_EXHAUSTED
    log.info("plan with %d steps", len(plan))
    return EXIT_OK


def cmd_execute(args) -> int:
    s = _scenario(args)
    if args.model:
        model = ClassifierModel.from_dict(json.loads(Path(args.model).read_text(encoding="utf-8")))
    else:
        model = register_model(s, s.registration if s.registration is not None else default_registration(s))
    outcome, trace = run_with_recovery(s.world(), s.goal, s.planner_config(), s.faults, s.recovery,
                                       s.sensor, model, Streams.from_seed(s.seed), s.perception)
    _write(args.out, _dumps({"seed": s.seed, **outcome.to_dict()}))
    _write(args.trace_out, trace.dumps())
    log.info("execution %s after %d replans", outcome.status.value, outcome.replans_used)
    return exit_code(outcome.status)


def cmd_register(args) -> int:
    s = _scenario(args)
    state = s.registration if s.registration is not None else s.initial
    model = register_model(s, state)
    _write(args.out, _dumps(model.to_dict()))
    return EXIT_OK


def cmd_bench(args) -> int:
    s = _scenario(args)
    try:
        heights = [float(x) for x in args.lift_heights.split(",") if x.strip()]
    except ValueError:
        raise ScenarioError(f"--lift-heights: expected comma-separated numbers, got {args.lift_heights!r}")
    report = run_bench(s, heights, args.trials, args.ceiling)
    _write(args.out, _dumps(report.to_dict()))
    sys.stdout.write(report.table())
    return EXIT_OK


def cmd_render(args) -> int:
    s = _scenario(args)
    state = s.initial
    if args.plan:
        d = json.loads(Path(args.plan).read_text(encoding="utf-8"))
        if d.get("final_state") is not None:
            state = RackState.from_grids(d["final_state"])
    events = []
    if args.trace:
        events = load_trace(Path(args.trace).read_text(encoding="utf-8").splitlines())
    svg = render_svg(state, s.tubes, events)
    if args.out:
        _write(args.out, svg)
    else:
        sys.stdout.write(svg + "\n")
    return EXIT_OK


def cmd_perceive(args) -> int:
    s = _scenario(args)
    if args.model:
        model = ClassifierModel.from_dict(json.loads(Path(args.model).read_text(encoding="utf-8")))
    else:
        model = register_model(s, s.registration if s.registration is not None else default_registration(s))
    streams = Streams.from_seed(s.seed)
    cloud = synth_cloud(s.world(), s.sensor, streams.perception)
    if args.cloud_out:
        write_xyz(args.cloud_out, cloud)
    p = perceive(cloud, s.layouts, model, s.perception)
    out = {
        "seed": s.seed,
        "state": p.state.grids(),
        "matches_truth": p.state == s.initial,
        "transforms": [T.to_dict() for T in p.transforms],
        "residuals_mm": list(p.residuals),
    }
    _write(args.out, _dumps(out))
    if not args.out:
        sys.stdout.write(_dumps(out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tuberack", description="Test-tube rack rearrangement planner")
    sub = p.add_subparsers(dest="command", required=True)

    def common(name: str, help_: str, trace: bool = True) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--scenario", required=True, help="scenario JSON file")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--out", default=None, help="output file")
        if trace:
            sp.add_argument("--trace-out", default=None, help="JSON-lines planner trace")
        return sp

    common("plan", "plan on the true scene without perception").set_defaults(func=cmd_plan)
    ex = common("execute", "perceive, plan and execute with fault recovery")
    ex.add_argument("--model", default=None, help="classifier model from `register`")
    ex.set_defaults(func=cmd_execute)
    common("register", "fit the tube classifier on the registration rack", trace=False).set_defaults(
        func=cmd_register)
    b = common("bench", "motion workload against lift height", trace=False)
    b.add_argument("--lift-heights", default="5,60", help="comma-separated lift heights in mm")
    b.add_argument("--trials", type=int, default=50)
    b.add_argument("--ceiling", type=float, default=None, help="workspace ceiling z in mm")
    b.set_defaults(func=cmd_bench)
    r = common("render", "SVG of rack occupancy and an optional trace timeline", trace=False)
    r.add_argument("--plan", default=None, help="plan JSON; renders its final state")
    r.add_argument("--trace", default=None, help="trace file to draw as a timeline")
    r.set_defaults(func=cmd_render)
    pc = common("perceive", "synthesize a scan and perceive the rack state", trace=False)
    pc.add_argument("--model", default=None)
    pc.add_argument("--cloud-out", default=None, help="write the synthetic cloud as XYZ text")
    pc.set_defaults(func=cmd_perceive)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("TUBERACK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING) if not level.isdigit() else int(level),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MissingTypeExamples as exc:
        log.error("registration failed: %s", exc)
        return EXIT_EXHAUSTED
    except PerceptionError as exc:
        log.error("perception failed: %s", exc)
        return EXIT_EXHAUSTED
    except (OSError, ScenarioError, json.JSONDecodeError, KeyError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
