"""SVG rendering of rack occupancy and planner trace timelines."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Sequence

from .rack import EMPTY, RackState, TubeType
from .trace import EventKind, TraceEvent, parse_id

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
CELL = 24
LANES = [EventKind.TASK_PLAN, EventKind.GRASP_REASON, EventKind.MOTION_PLAN,
         EventKind.WEIGHT_MAP_UPDATE, EventKind.RE_EXPLORATION, EventKind.RECOVERY]


def type_colors(catalog: Sequence[TubeType]) -> dict[int, str]:
    return {t.id: PALETTE[i % len(PALETTE)] for i, t in enumerate(sorted(catalog, key=lambda t: t.id))}


def _racks(parent: ET.Element, state: RackState, catalog: Sequence[TubeType], x0: float, y0: float) -> tuple[float, float]:
    """Draw racks side by side, row 0 at the bottom; returns (width, height) used."""
    colors = type_colors(catalog)
    names = {t.id: t.name for t in catalog}
    x = x0
    height = 0.0
    for k, ((rows, cols), cells) in enumerate(zip(state.shapes, state.cells)):
        g = ET.SubElement(parent, "g", {"class": "rack", "data-rack": str(k)})
        for r in range(rows):
            for c in range(cols):
                v = cells[r * cols + c]
                cx = x + c * CELL
                cy = y0 + (rows - 1 - r) * CELL
                attrs = {"x": f"{cx}", "y": f"{cy}", "width": f"{CELL - 2}", "height": f"{CELL - 2}",
                         "data-row": str(r), "data-col": str(c)}
                if v == EMPTY:
                    attrs.update({"class": "hole empty", "fill": "#ffffff", "stroke": "#888888"})
                else:
                    attrs.update({"class": f"hole tube type-{v}", "fill": colors.get(v, "#000000"),
                                  "stroke": "#333333"})
                rect = ET.SubElement(g, "rect", attrs)
                if v != EMPTY:
                    ET.SubElement(rect, "title").text = names.get(v, str(v))
        x += cols * CELL + CELL
        height = max(height, rows * CELL)
    return x - x0, height


def _timeline(parent: ET.Element, events: Sequence[TraceEvent], x0: float, y0: float) -> tuple[float, float]:
    lane_h = 20
    step = 10
    g = ET.SubElement(parent, "g", {"class": "timeline"})
    for i, kind in enumerate(LANES):
        t = ET.SubElement(g, "text", {"x": f"{x0}", "y": f"{y0 + i * lane_h + 14}", "class": "lane-label",
                                      "font-size": "11"})
        t.text = kind.value
    lx = x0 + 110
    for n, e in enumerate(events):
        lane = LANES.index(e.kind)
        cls = "event success" if e.ok else "event failure"
        rect = ET.SubElement(g, "rect", {
            "x": f"{lx + n * step}", "y": f"{y0 + lane * lane_h + 3}", "width": f"{step - 2}",
            "height": f"{lane_h - 6}", "class": cls, "data-id": e.id,
            "fill": "#4c9be8" if e.ok else "#e8604c",
        })
        ET.SubElement(rect, "title").text = f"{e.id} {e.outcome}"
    return 110 + len(events) * step, len(LANES) * lane_h


def render_svg(state: RackState | None, catalog: Sequence[TubeType], events: Sequence[TraceEvent] = ()) -> str:
    """SVG markup showing ``state`` (if given) above an optional trace timeline."""
    for e in events:
        parse_id(e.id)
    root = ET.Element("svg", {"xmlns": "http://www.w3.org/2000/svg", "version": "1.1"})
    pad = 10.0
    w = 0.0
    y = pad
    if state is not None:
        rw, rh = _racks(root, state, catalog, pad, y)
        w, y = max(w, rw), y + rh + pad
    if events:
        tw, th = _timeline(root, events, pad, y)
        w, y = max(w, tw), y + th + pad
    root.set("width", f"{w + 2 * pad:.0f}")
    root.set("height", f"{y + pad:.0f}")
    return ET.tostring(root, encoding="unicode")
