"""Declarative flow-graph model: graphs of miniflows whose nodes compose
responses from template or callback segments, with dialogue-act conditioned
edges.

Document format (JSON, ``schema_version`` 1)::

    {
      "schema_version": 1,
      "topic": "music",
      "entry_policy": "ordered" | "random" | "scored",
      "calendar": [{"content_id": "valentine", "start": "02-07", "end": "02-14"}],
      "ack_templates": ["Cool.", ...],          # optional transition openers
      "closing_templates": ["Anyway, ...", ...] # optional exhaustion bodies
      "miniflows": [
        {"id": "genres", "entry_node": "ask", "independent": true,
         "score": 0, "content_id": null, "skip_for_returning": false,
         "nodes": [
           {"id": "ask", "is_leaf": false,
            "capture": {"slot": "genre", "kind": "text"},      # optional
            "segments": [
              {"kind": "template_set", "part": "body",
               "templates": ["..."], "content_id": null},
              {"kind": "callback", "part": "body",
               "callback": "begin_miniflow", "params": {}}
            ],
            "edges": [
              {"da": ["YesAnswer"], "target": "yes", "priority": 1,
               "sentiment": null, "entity_type": null, "keyword": null},
              {"da": [], "target": "any", "priority": 99}      # default
            ]}
         ]}
      ]
    }
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ValidationError
from ..nlu import DaTag
from ..rg import ResponsePart

ENTRY_POLICIES = ("ordered", "random", "scored")
CAPTURE_KINDS = ("name", "place", "interest", "keyword", "text")


@dataclass(frozen=True)
class CalendarWindow:
    content_id: str
    start: str  # MM-DD, inclusive
    end: str  # MM-DD, inclusive


@dataclass(frozen=True)
class SegmentSpec:
    kind: str  # template_set | callback
    part: ResponsePart
    templates: tuple[str, ...] = ()
    callback: str | None = None
    params: dict = field(default_factory=dict)
    content_id: str | None = None


@dataclass(frozen=True)
class FlowEdge:
    da_condition: frozenset[DaTag]
    target: str
    priority: int
    sentiment: str | None = None
    entity_type: str | None = None
    keyword: str | None = None

    @property
    def is_default(self) -> bool:
        return not self.da_condition and not self.has_secondary

    @property
    def has_secondary(self) -> bool:
        return any(v is not None for v in (self.sentiment, self.entity_type, self.keyword))


@dataclass(frozen=True)
class FlowNode:
    id: str
    segments: tuple[SegmentSpec, ...]
    edges: tuple[FlowEdge, ...]
    is_leaf: bool = False
    capture: dict | None = None


@dataclass(frozen=True)
class Miniflow:
    id: str
    entry_node: str
    nodes: dict[str, FlowNode]
    order: tuple[str, ...]  # document order of node ids
    independent: bool = True
    score: float = 0.0
    content_id: str | None = None
    skip_for_returning: bool = False

    def node(self, node_id: str) -> FlowNode:
        return self.nodes[node_id]


@dataclass(frozen=True)
class FlowGraph:
    topic: str
    entry_policy: str
    miniflows: tuple[Miniflow, ...]
    calendar: tuple[CalendarWindow, ...] = ()
    ack_templates: tuple[str, ...] = ()
    closing_templates: tuple[str, ...] = ()

    def miniflow(self, miniflow_id: str) -> Miniflow:
        for mf in self.miniflows:
            if mf.id == miniflow_id:
                return mf
        raise KeyError(miniflow_id)

    def miniflow_ids(self) -> list[str]:
        return [mf.id for mf in self.miniflows]


@dataclass
class FlowCursor:
    """Position inside one flow; serializes into conversation state so a
    suspension survives generator switches and restarts."""

    topic: str
    miniflow_id: str
    node_id: str
    visited_miniflows: set[str] = field(default_factory=set)
    suspended_at_turn: int | None = None

    def to_dict(self) -> dict:
        return {
            "topic": self.topic,
            "miniflow_id": self.miniflow_id,
            "node_id": self.node_id,
            "visited_miniflows": sorted(self.visited_miniflows),
            "suspended_at_turn": self.suspended_at_turn,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FlowCursor":
        return cls(
            topic=doc["topic"],
            miniflow_id=doc["miniflow_id"],
            node_id=doc["node_id"],
            visited_miniflows=set(doc.get("visited_miniflows", [])),
            suspended_at_turn=doc.get("suspended_at_turn"),
        )


def validate_graph(graph: FlowGraph, known_callbacks: set[str] | None = None) -> list[str]:
    """Structural validation; returns findings (empty means valid). Each
    finding carries the offending miniflow/node location."""
    findings: list[str] = []
    if graph.entry_policy not in ENTRY_POLICIES:
        findings.append(f"unknown entry_policy {graph.entry_policy!r}")
    if not graph.miniflows:
        findings.append("graph has no miniflows")

    seen_mf: set[str] = set()
    for mf in graph.miniflows:
        loc = f"miniflow {mf.id!r}"
        if mf.id in seen_mf:
            findings.append(f"duplicate miniflow id {mf.id!r}")
        seen_mf.add(mf.id)
        if mf.entry_node not in mf.nodes:
            findings.append(f"{loc}: entry node {mf.entry_node!r} missing")
            continue
        for node in mf.nodes.values():
            findings.extend(_validate_node(mf, node, graph, known_callbacks))
        findings.extend(_check_reachability(mf))

    window_ids = {w.content_id for w in graph.calendar}
    for w in graph.calendar:
        if not (_valid_monthday(w.start) and _valid_monthday(w.end)):
            findings.append(f"calendar {w.content_id!r}: bad month-day window {w.start}..{w.end}")
        elif w.start > w.end:
            findings.append(f"calendar {w.content_id!r}: start after end")
    for mf in graph.miniflows:
        if mf.content_id and mf.content_id not in window_ids:
            findings.append(f"miniflow {mf.id!r}: content_id {mf.content_id!r} has no calendar window")
        for node in mf.nodes.values():
            for i, seg in enumerate(node.segments):
                if seg.content_id and seg.content_id not in window_ids:
                    findings.append(
                        f"miniflow {mf.id!r} node {node.id!r} segment {i}: "
                        f"content_id {seg.content_id!r} has no calendar window"
                    )
    return findings


def _validate_node(
    mf: Miniflow, node: FlowNode, graph: FlowGraph, known_callbacks: set[str] | None
) -> list[str]:
    findings = []
    loc = f"miniflow {mf.id!r} node {node.id!r}"
    if not node.segments:
        findings.append(f"{loc}: no segments")
    for i, seg in enumerate(node.segments):
        if seg.kind == "template_set":
            if not seg.templates:
                findings.append(f"{loc} segment {i}: empty template set")
        elif seg.kind == "callback":
            if not seg.callback:
                findings.append(f"{loc} segment {i}: callback segment without callback id")
            elif known_callbacks is not None and seg.callback not in known_callbacks:
                findings.append(f"{loc} segment {i}: unregistered callback {seg.callback!r}")
        else:
            findings.append(f"{loc} segment {i}: unknown kind {seg.kind!r}")
    if node.capture is not None:
        if node.capture.get("kind") not in CAPTURE_KINDS:
            findings.append(f"{loc}: unknown capture kind {node.capture.get('kind')!r}")
        if not node.capture.get("slot"):
            findings.append(f"{loc}: capture without slot name")

    if node.is_leaf:
        if node.edges:
            findings.append(f"{loc}: leaf node has edges")
        return findings

    if not node.edges:
        findings.append(f"{loc}: non-leaf node has no edges")
        return findings
    defaults = [e for e in node.edges if e.is_default]
    if len(defaults) != 1:
        findings.append(f"{loc}: expected exactly one default edge, found {len(defaults)}")
    priorities = [e.priority for e in node.edges]
    if len(set(priorities)) != len(priorities):
        findings.append(f"{loc}: duplicate edge priorities")
    for e in node.edges:
        if e.target not in mf.nodes:
            findings.append(f"{loc}: edge targets missing node {e.target!r}")
        if not e.da_condition and e.has_secondary:
            findings.append(f"{loc}: edge with secondary predicates must name dialogue acts")
    return findings


def _check_reachability(mf: Miniflow) -> list[str]:
    reached = {mf.entry_node}
    frontier = [mf.entry_node]
    while frontier:
        node = mf.nodes.get(frontier.pop())
        if node is None:
            continue
        for edge in node.edges:
            if edge.target in mf.nodes and edge.target not in reached:
                reached.add(edge.target)
                frontier.append(edge.target)
    unreachable = set(mf.nodes) - reached
    if unreachable:
        return [f"miniflow {mf.id!r}: unreachable nodes {sorted(unreachable)}"]
    return []


def _valid_monthday(value: str) -> bool:
    if len(value) != 5 or value[2] != "-":
        return False
    try:
        month, day = int(value[:2]), int(value[3:])
    except ValueError:
        return False
    return 1 <= month <= 12 and 1 <= day <= 31


def ensure_valid(graph: FlowGraph, known_callbacks: set[str] | None = None) -> FlowGraph:
    findings = validate_graph(graph, known_callbacks)
    if findings:
        raise ValidationError(findings)
    return graph
