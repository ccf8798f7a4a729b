"""JSON scenario files.

Occupancy grids are lists of row strings, one per rack, row 0 first; each
row holds space-separated tokens. Initial and registration tokens are a
tube symbol or ``.`` (empty). Goal tokens are ``*`` (don't care), ``.``
(must stay empty) or one or more concatenated symbols naming the
admissible types, so ``AB`` admits both A and B. Symbols are single
characters.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .execution import FaultConfig, FaultKind, RecoveryPolicy
from .motion import MotionParams
from .orchestrator import PlannerBudget, PlannerConfig
from .perception import PerceptionParams, SensorParams
from .rack import EMPTY, GoalPattern, RackLayout, RackState, TubeType
from .search import DIRECTIONS, AccessFilter, FilterBank, MoveConstraint, MoveMode, default_filter_bank
from .transforms import RigidTransform
from .world import GripperModel, Obstacle, WorldModel

_DIR_NAMES = {v: k for k, v in DIRECTIONS.items()}


class ScenarioError(ValueError):
    pass


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


@dataclass(frozen=True)
class Scenario:
    seed: int
    tubes: tuple[TubeType, ...]
    layouts: tuple[RackLayout, ...]
    initial: RackState
    goal: GoalPattern
    table_z_mm: float = -65.0
    mode: MoveMode = MoveMode.ARRANGE
    gripper: GripperModel = field(default_factory=GripperModel)
    bank: FilterBank = field(default_factory=default_filter_bank)
    motion: MotionParams = field(default_factory=MotionParams)
    budget: PlannerBudget = field(default_factory=PlannerBudget)
    n_yaw: int = 8
    grip_fractions: tuple[float, ...] = (0.5,)
    weight_map_key: str = "state"  # "state" or "global"
    faults: FaultConfig = field(default_factory=FaultConfig)
    recovery: RecoveryPolicy = field(default_factory=RecoveryPolicy)
    sensor: SensorParams = field(default_factory=SensorParams)
    perception: PerceptionParams = field(default_factory=PerceptionParams)
    registration: RackState | None = None
    obstacles: tuple[Obstacle, ...] = ()

    def world(self) -> WorldModel:
        return WorldModel(self.layouts, self.initial, self.table_z_mm, self.gripper, self.tubes, self.obstacles)

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(self.bank, MoveConstraint(self.mode), self.motion, self.budget,
                             self.n_yaw, self.grip_fractions, self.weight_map_key == "state")

    def with_seed(self, seed: int) -> Scenario:
        return dataclasses.replace(self, seed=seed)


def _tuplify(v: Any) -> Any:
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _build(cls, data: Any, where: str, skip: tuple[str, ...] = ()):
    """Instantiate a flat dataclass from a JSON object, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ValidationError(where, "expected an object")
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValidationError(f"{where}.{unknown[0]}", "unknown field")
    for k, v in data.items():
        if isinstance(v, bool) or v is None or isinstance(v, (list, str)):
            continue
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValidationError(f"{where}.{k}", f"expected a finite number, got {v!r}")
    try:
        return cls(**{k: _tuplify(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise ValidationError(where, str(exc)) from None


def _pose(d: dict | None, where: str) -> RigidTransform:
    if d is None:
        return RigidTransform()
    if not isinstance(d, dict) or set(d) - {"x", "y", "z", "yaw"}:
        raise ValidationError(where, "pose takes x, y, z, yaw")
    x, y, z, yaw = (float(d.get(k, 0.0)) for k in ("x", "y", "z", "yaw"))
    # settle yaw on a value that the rotation matrix reproduces exactly, so
    # saving and reloading yields an identical transform
    T = RigidTransform.from_xyz_yaw(x, y, z, yaw)
    for _ in range(8):
        nxt = RigidTransform.from_xyz_yaw(x, y, z, T.yaw)
        if nxt == T:
            break
        T = nxt
    return T


def _rows(grid: Any, layout: RackLayout, where: str) -> list[list[str]]:
    if not isinstance(grid, list) or not all(isinstance(r, str) for r in grid):
        raise ValidationError(where, "expected a list of row strings")
    if len(grid) != layout.rows:
        raise ValidationError(where, f"expected {layout.rows} rows, got {len(grid)}")
    out = []
    for i, row in enumerate(grid):
        toks = row.split()
        if len(toks) != layout.cols:
            raise ValidationError(f"{where}[{i}]", f"expected {layout.cols} tokens, got {len(toks)}")
        out.append(toks)
    return out


def _occupancy(grids: Any, layouts, symbols: dict[str, int], where: str) -> RackState:
    if not isinstance(grids, list) or len(grids) != len(layouts):
        raise ValidationError(where, f"expected one grid per rack ({len(layouts)})")
    cells = []
    for k, (g, layout) in enumerate(zip(grids, layouts)):
        rack = []
        for i, toks in enumerate(_rows(g, layout, f"{where}[{k}]")):
            for tok in toks:
                if tok == ".":
                    rack.append(EMPTY)
                elif tok in symbols:
                    rack.append(symbols[tok])
                else:
                    raise ValidationError(f"{where}[{k}][{i}]", f"undeclared tube symbol {tok!r}")
        cells.append(tuple(rack))
    return RackState(tuple(l.shape for l in layouts), tuple(cells))


def _goal(grids: Any, layouts, symbols: dict[str, int], where: str) -> GoalPattern:
    if not isinstance(grids, list) or len(grids) != len(layouts):
        raise ValidationError(where, f"expected one grid per rack ({len(layouts)})")
    adm = []
    for k, (g, layout) in enumerate(zip(grids, layouts)):
        rack = []
        for i, toks in enumerate(_rows(g, layout, f"{where}[{k}]")):
            for tok in toks:
                if tok == "*":
                    rack.append(None)
                elif tok == ".":
                    rack.append(frozenset())
                else:
                    bad = [c for c in tok if c not in symbols]
                    if bad:
                        raise ValidationError(f"{where}[{k}][{i}]", f"undeclared tube symbol {bad[0]!r}")
                    rack.append(frozenset(symbols[c] for c in tok))
        adm.append(tuple(rack))
    return GoalPattern(tuple(l.shape for l in layouts), tuple(adm))


def _bank(d: Any, where: str) -> FilterBank:
    if d is None:
        return default_filter_bank()
    if not isinstance(d, dict) or set(d) - {"oob_is_empty", "bank"}:
        raise ValidationError(where, "filters take oob_is_empty and bank")
    oob = d.get("oob_is_empty", True)
    if "bank" not in d:
        return default_filter_bank(bool(oob))
    filters = []
    for i, f in enumerate(d["bank"]):
        try:
            filters.append(AccessFilter.of(*f["mask"], requires_oob=f.get("requires_oob", ())))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{where}.bank[{i}]", f"bad filter: {exc}") from None
    try:
        return FilterBank(tuple(filters), bool(oob))
    except ValueError as exc:
        raise ValidationError(f"{where}.bank", str(exc)) from None


def _faults(d: Any, where: str) -> FaultConfig:
    if d is None:
        return FaultConfig()
    if not isinstance(d, dict):
        raise ValidationError(where, "expected an object")
    d = dict(d)
    forced = {}
    for i, item in enumerate(d.pop("forced", [])):
        try:
            forced[int(item["step"])] = FaultKind(item["kind"])
        except (KeyError, TypeError, ValueError):
            raise ValidationError(f"{where}.forced[{i}]", "expected {step: int, kind: Slip|Overload|Misplace}") from None
    cfg = _build(FaultConfig, d, where, skip=("forced_faults",))
    try:
        return dataclasses.replace(cfg, forced_faults=forced)
    except ValueError as exc:
        raise ValidationError(f"{where}.forced", str(exc)) from None


def scenario_from_dict(d: Any) -> Scenario:
    if not isinstance(d, dict):
        raise ValidationError("$", "scenario must be a JSON object")
    known = {"seed", "mode", "tubes", "racks", "table_z_mm", "initial", "goal", "registration", "gripper",
             "filters", "motion", "budget", "planner", "faults", "recovery", "sensor", "perception", "obstacles"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValidationError(unknown[0], "unknown field")
    for req in ("seed", "tubes", "racks", "initial", "goal"):
        if req not in d:
            raise ValidationError(req, "required field missing")
    seed = d["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ValidationError("seed", "expected a non-negative integer")

    tubes = []
    if not isinstance(d["tubes"], list) or not d["tubes"]:
        raise ValidationError("tubes", "expected a non-empty list")
    for i, t in enumerate(d["tubes"]):
        tubes.append(_build(TubeType, t, f"tubes[{i}]"))
    ids = [t.id for t in tubes]
    if len(set(ids)) != len(ids):
        raise ValidationError("tubes", "tube ids must be unique")
    symbols: dict[str, int] = {}
    for i, t in enumerate(tubes):
        if len(t.symbol) != 1 or t.symbol in ".* ":
            raise ValidationError(f"tubes[{i}].symbol", "symbol must be one character other than '.', '*'")
        if t.symbol in symbols:
            raise ValidationError(f"tubes[{i}].symbol", f"duplicate symbol {t.symbol!r}")
        symbols[t.symbol] = t.id

    if not isinstance(d["racks"], list) or not 1 <= len(d["racks"]) <= 2:
        raise ValidationError("racks", "expected one or two racks")
    layouts = []
    for i, r in enumerate(d["racks"]):
        if not isinstance(r, dict):
            raise ValidationError(f"racks[{i}]", "expected an object")
        r = dict(r)
        pose = _pose(r.pop("pose", None), f"racks[{i}].pose")
        lay = _build(RackLayout, r, f"racks[{i}]", skip=("base_pose",))
        layouts.append(lay.with_pose(pose))
    layouts = tuple(layouts)

    try:
        mode = MoveMode(d.get("mode", "arrange"))
    except ValueError:
        raise ValidationError("mode", "expected 'arrange' or 'separate'") from None
    if mode is MoveMode.SEPARATE and len(layouts) != 2:
        raise ValidationError("mode", "separate mode needs two racks")

    initial = _occupancy(d["initial"], layouts, symbols, "initial")
    goal = _goal(d["goal"], layouts, symbols, "goal")
    registration = None
    if d.get("registration") is not None:
        registration = _occupancy(d["registration"], layouts, symbols, "registration")

    gripper = _build(GripperModel, d.get("gripper", {}), "gripper")
    diam = 2 * max(t.radius_mm for t in tubes)
    if gripper.max_open_mm <= diam:
        raise ValidationError("gripper.max_open_mm", f"must exceed the largest tube diameter {diam}")

    planner = d.get("planner", {})
    if not isinstance(planner, dict) or set(planner) - {"n_yaw", "grip_fractions", "weight_map"}:
        raise ValidationError("planner", "planner takes n_yaw, grip_fractions and weight_map")
    wm_key = planner.get("weight_map", "state")
    if wm_key not in ("state", "global"):
        raise ValidationError("planner.weight_map", "expected 'state' or 'global'")
    n_yaw = planner.get("n_yaw", 8)
    if isinstance(n_yaw, bool) or not isinstance(n_yaw, int) or n_yaw < 1:
        raise ValidationError("planner.n_yaw", "expected a positive integer")
    fracs = tuple(float(x) for x in planner.get("grip_fractions", [0.5]))
    if not fracs or any(not 0.0 < f < 1.0 for f in fracs):
        raise ValidationError("planner.grip_fractions", "fractions must lie in (0, 1)")

    obstacles = tuple(_build(Obstacle, o, f"obstacles[{i}]") for i, o in enumerate(d.get("obstacles", [])))
    table_z = d.get("table_z_mm", -65.0)
    if not isinstance(table_z, (int, float)) or isinstance(table_z, bool):
        raise ValidationError("table_z_mm", "expected a number")

    s = Scenario(
        seed=seed, tubes=tuple(tubes), layouts=layouts, initial=initial, goal=goal,
        table_z_mm=float(table_z), mode=mode, gripper=gripper, bank=_bank(d.get("filters"), "filters"),
        motion=_build(MotionParams, d.get("motion", {}), "motion"),
        budget=_build(PlannerBudget, d.get("budget", {}), "budget"),
        n_yaw=n_yaw, grip_fractions=fracs, weight_map_key=wm_key, faults=_faults(d.get("faults"), "faults"),
        recovery=_build(RecoveryPolicy, d.get("recovery", {}), "recovery"),
        sensor=_build(SensorParams, d.get("sensor", {}), "sensor"),
        perception=_build(PerceptionParams, d.get("perception", {}), "perception"),
        registration=registration, obstacles=obstacles,
    )
    try:
        s.world()
    except ValueError as exc:
        raise ValidationError("racks", str(exc)) from None
    if initial.tube_counts() and set(initial.tube_counts()) - set(ids):
        raise ValidationError("initial", "references undeclared tube ids")
    return s


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return scenario_from_dict(data)


def _grid_rows(state: RackState, symbol_of: dict[int, str]) -> list[list[str]]:
    out = []
    for (rows, cols), cells in zip(state.shapes, state.cells):
        out.append([" ".join("." if v == EMPTY else symbol_of[v] for v in cells[r * cols:(r + 1) * cols])
                    for r in range(rows)])
    return out


def _goal_rows(goal: GoalPattern, symbol_of: dict[int, str]) -> list[list[str]]:
    def tok(a):
        if a is None:
            return "*"
        if not a:
            return "."
        return "".join(symbol_of[t] for t in sorted(a))

    out = []
    for (rows, cols), adm in zip(goal.shapes, goal.admissible):
        out.append([" ".join(tok(a) for a in adm[r * cols:(r + 1) * cols]) for r in range(rows)])
    return out


def _plain(obj, skip: tuple[str, ...] = ()) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        if f.name in skip:
            continue
        v = getattr(obj, f.name)
        out[f.name] = [list(x) if isinstance(x, tuple) else x for x in v] if isinstance(v, tuple) else v
    return out


def scenario_to_dict(s: Scenario) -> dict:
    symbol_of = {t.id: t.symbol for t in s.tubes}
    racks = []
    for l in s.layouts:
        d = _plain(l, skip=("base_pose",))
        T = l.base_pose
        d["pose"] = {"x": float(T.translation[0]), "y": float(T.translation[1]),
                     "z": float(T.translation[2]), "yaw": T.yaw}
        racks.append(d)
    bank = {"oob_is_empty": s.bank.oob_is_empty, "bank": [
        {"mask": sorted(_DIR_NAMES[o] for o in f.mask), "requires_oob": sorted(_DIR_NAMES[o] for o in f.requires_oob)}
        for f in s.bank.filters]}
    faults = _plain(s.faults, skip=("forced_faults",))
    faults["forced"] = [{"step": k, "kind": v.value} for k, v in sorted(s.faults.forced_faults.items())]
    out = {
        "seed": s.seed,
        "mode": s.mode.value,
        "tubes": [_plain(t) for t in s.tubes],
        "racks": racks,
        "table_z_mm": s.table_z_mm,
        "initial": _grid_rows(s.initial, symbol_of),
        "goal": _goal_rows(s.goal, symbol_of),
        "gripper": _plain(s.gripper),
        "filters": bank,
        "motion": _plain(s.motion),
        "budget": _plain(s.budget),
        "planner": {"n_yaw": s.n_yaw, "grip_fractions": list(s.grip_fractions),
                    "weight_map": s.weight_map_key},
        "faults": faults,
        "recovery": _plain(s.recovery),
        "sensor": _plain(s.sensor),
        "perception": _plain(s.perception),
        "obstacles": [_plain(o) for o in s.obstacles],
    }
    if s.registration is not None:
        out["registration"] = _grid_rows(s.registration, symbol_of)
    return out


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n", encoding="utf-8")
