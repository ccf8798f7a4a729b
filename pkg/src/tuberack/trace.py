"""Planner event log with TP/GR/MP identifiers.

Ids: ``TPk`` task planning invocation k (1-based); ``GRk.i`` grasp reasoning
for step i of that sequence; ``MPk.i.j`` motion planning for config pair j;
``WMk.i`` a weight-map record created at step i; ``REk`` the re-exploration
leaving invocation k; ``RCk`` a recovery after executing the plan of TPk.
"""

from __future__ import annotations

import enum
import json
import re
import time
from dataclasses import dataclass, field
from typing import Any, Iterable

_BIG = 10**9


class EventKind(enum.Enum):
    TASK_PLAN = "TaskPlan"
    GRASP_REASON = "GraspReason"
    MOTION_PLAN = "MotionPlan"
    WEIGHT_MAP_UPDATE = "WeightMapUpdate"
    RE_EXPLORATION = "ReExploration"
    RECOVERY = "Recovery"


SUCCESS = "Success"


def failure(reason: str) -> str:
    return f"Failure({reason})"


_ID_RE = re.compile(r"^(TP|GR|MP|WM|RE|RC)(\d+)(?:\.(\d+))?(?:\.(\d+))?$")
_ARITY = {"TP": 1, "GR": 2, "MP": 3, "WM": 2, "RE": 1, "RC": 1}
_OUTCOME_RE = re.compile(r"^(Success|Failure\([A-Za-z]+\))$")


def parse_id(event_id: str) -> tuple[int, int, int, int]:
    """Sort key that is strictly increasing along a well-formed trace."""
    m = _ID_RE.match(event_id)
    if not m:
        raise ValueError(f"malformed event id {event_id!r}")
    tag = m.group(1)
    nums = [int(g) for g in m.groups()[1:] if g is not None]
    if len(nums) != _ARITY[tag]:
        raise ValueError(f"event id {event_id!r} has wrong arity")
    k = nums[0]
    if tag == "TP":
        return (k, -1, -1, 0)
    if tag == "GR":
        return (k, nums[1], -1, 0)
    if tag == "MP":
        return (k, nums[1], nums[2], 0)
    if tag == "WM":
        return (k, nums[1], _BIG, 1)
    if tag == "RE":
        return (k, _BIG, _BIG, 2)
    return (k, _BIG, _BIG, 3)


_KIND_TAG = {
    EventKind.TASK_PLAN: "TP", EventKind.GRASP_REASON: "GR", EventKind.MOTION_PLAN: "MP",
    EventKind.WEIGHT_MAP_UPDATE: "WM", EventKind.RE_EXPLORATION: "RE", EventKind.RECOVERY: "RC",
}


@dataclass(frozen=True)
class TraceEvent:
    id: str
    kind: EventKind
    outcome: str
    payload: dict[str, Any] = field(default_factory=dict)
    wall_ns: int = 0

    @property
    def ok(self) -> bool:
        return self.outcome == SUCCESS

    @property
    def reason(self) -> str | None:
        if self.ok:
            return None
        return self.outcome[len("Failure("):-1]

    def to_json(self) -> str:
        obj = {"id": self.id, "kind": self.kind.value, "outcome": self.outcome,
               "payload": self.payload, "wall_ns": self.wall_ns}
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> TraceEvent:
        obj = json.loads(line)
        if list(obj) != ["id", "kind", "outcome", "payload", "wall_ns"]:
            raise ValueError(f"unexpected trace fields {list(obj)}")
        kind = EventKind(obj["kind"])
        parse_id(obj["id"])
        if not obj["id"].startswith(_KIND_TAG[kind]):
            raise ValueError(f"id {obj['id']} does not match kind {kind.value}")
        if not _OUTCOME_RE.match(obj["outcome"]):
            raise ValueError(f"malformed outcome {obj['outcome']!r}")
        return cls(obj["id"], kind, obj["outcome"], obj["payload"], int(obj["wall_ns"]))


class PlanTrace:
    """Append-only event buffer; owns the task-planning counter across re-plans.

    Wall-clock stamps are only recorded when ``timing`` is set so that
    traces stay byte-identical between runs by default.
    """

    def __init__(self, timing: bool = False):
        self.events: list[TraceEvent] = []
        self.tp_count = 0
        self.timing = timing
        self._t0 = time.perf_counter_ns()

    def next_tp(self) -> int:
        self.tp_count += 1
        return self.tp_count

    def emit(self, event_id: str, kind: EventKind, outcome: str, **payload: Any) -> TraceEvent:
        wall = time.perf_counter_ns() - self._t0 if self.timing else 0
        ev = TraceEvent(event_id, kind, outcome, payload, wall)
        self.events.append(ev)
        return ev

    def of_kind(self, kind: EventKind) -> list[TraceEvent]:
        return [e for e in self.events if e.kind is kind]

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def dumps(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())


def load_trace(lines: Iterable[str]) -> list[TraceEvent]:
    return [TraceEvent.from_json(l) for l in lines if l.strip()]


def check_grammar(events: list[TraceEvent]) -> None:
    """Raise ValueError unless ids are well formed, unique and strictly increasing."""
    prev = None
    seen = set()
    for e in events:
        key = parse_id(e.id)
        if e.id in seen:
            raise ValueError(f"duplicate event id {e.id}")
        seen.add(e.id)
        if prev is not None and key <= prev:
            raise ValueError(f"event id {e.id} out of order")
        prev = key
