from __future__ import annotations

import json
from pathlib import Path

import pytest

from helpers import TUBES_JSON
from tuberack.execution import FaultKind
from tuberack.rack import RackState
from tuberack.scenario import ParseError, ValidationError, load_scenario, save_scenario, scenario_from_dict

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def _minimal(**over):
    d = {"seed": 1, "tubes": TUBES_JSON, "racks": [{"rows": 1, "cols": 3}],
         "initial": [["A . B"]], "goal": [["* . AB"]]}
    d.update(over)
    return d


def test_minimal_1x3(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(_minimal()))
    s = load_scenario(p)
    assert s.initial == RackState.from_grids([[[1, 0, 2]]])
    assert s.goal.admissible[0] == (None, frozenset(), frozenset({1, 2}))
    assert s.seed == 1


def test_undeclared_goal_type_rejected():
    with pytest.raises(ValidationError) as exc:
        scenario_from_dict(_minimal(goal=[["* . C"]]))
    assert exc.value.field.startswith("goal")


def test_seedless_rejected():
    d = _minimal()
    del d["seed"]
    with pytest.raises(ValidationError) as exc:
        scenario_from_dict(d)
    assert exc.value.field == "seed"


@pytest.mark.parametrize("over,field", [
    ({"initial": [["A ."]]}, "initial[0][0]"),
    ({"racks": []}, "racks"),
    ({"mode": "separate"}, "mode"),
    ({"bogus": 1}, "bogus"),
    ({"seed": -1}, "seed"),
    ({"motion": {"lift_height_mm": -5}}, "motion"),
])
def test_validation_names_the_field(over, field):
    with pytest.raises(ValidationError) as exc:
        scenario_from_dict(_minimal(**over))
    assert exc.value.field == field


def test_parse_error_has_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "seed": 1,\n  "tubes": [\n}')
    with pytest.raises(ParseError) as exc:
        load_scenario(p)
    assert ":4:1:" in str(exc.value)


@pytest.mark.parametrize("name", sorted(p.name for p in SCENARIOS.glob("*.json")))
def test_shipped_scenarios_round_trip(tmp_path, name):
    s = load_scenario(SCENARIOS / name)
    save_scenario(s, tmp_path / name)
    assert load_scenario(tmp_path / name) == s


def test_forced_faults_parsed():
    s = load_scenario(SCENARIOS / "overload.json")
    assert s.faults.forced_faults == {1: FaultKind.OVERLOAD}
    assert s.recovery.max_replans == 1


def test_weight_map_key_option():
    s = scenario_from_dict(_minimal(planner={"weight_map": "global"}))
    assert s.planner_config().state_conditioned_weights is False
    assert scenario_from_dict(_minimal()).planner_config().state_conditioned_weights is True
    with pytest.raises(ValidationError):
        scenario_from_dict(_minimal(planner={"weight_map": "holes"}))
