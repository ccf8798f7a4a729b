from __future__ import annotations

import xml.etree.ElementTree as ET

from helpers import CATALOG
from tuberack.rack import RackState
from tuberack.render import render_svg, type_colors
from tuberack.trace import EventKind, TraceEvent, failure

NS = {"s": "http://www.w3.org/2000/svg"}


def _holes(svg: str):
    root = ET.fromstring(svg)
    return root, root.findall(".//s:rect", NS)


def test_empty_rack_draws_empty_cells():
    root, rects = _holes(render_svg(RackState.empty([(2, 3)]), CATALOG))
    assert root.tag == "{http://www.w3.org/2000/svg}svg"
    assert len(rects) == 6
    assert all("empty" in r.get("class") for r in rects)


def test_two_types_two_fills():
    state = RackState.from_grids([[[1, 2, 0], [2, 1, 1]]])
    _, rects = _holes(render_svg(state, CATALOG))
    fills = {r.get("fill") for r in rects if "tube" in r.get("class")}
    assert fills == set(type_colors(CATALOG).values()) and len(fills) == 2


def test_one_failure_mark():
    events = [
        TraceEvent("TP1", EventKind.TASK_PLAN, "Success"),
        TraceEvent("GR1.0", EventKind.GRASP_REASON, failure("NoCommonGrasp")),
        TraceEvent("WM1.0", EventKind.WEIGHT_MAP_UPDATE, "Success"),
        TraceEvent("RE1", EventKind.RE_EXPLORATION, "Success"),
        TraceEvent("TP2", EventKind.TASK_PLAN, "Success"),
    ]
    _, rects = _holes(render_svg(None, CATALOG, events))
    marks = [r for r in rects if "event" in (r.get("class") or "")]
    assert [r.get("data-id") for r in marks] == [e.id for e in events]
    assert [r.get("data-id") for r in marks if "failure" in r.get("class")] == ["GR1.0"]


def test_two_racks_side_by_side():
    _, rects = _holes(render_svg(RackState.empty([(1, 2), (1, 2)]), CATALOG))
    xs = sorted(float(r.get("x")) for r in rects)
    assert len(xs) == 4 and xs[2] > xs[1]
