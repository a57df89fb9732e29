"""Flow document parsing. See ``model`` for the JSON schema."""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import ParseError
from ..nlu import DaTag
from ..rg import ResponsePart
from .model import (
    CalendarWindow,
    FlowEdge,
    FlowGraph,
    FlowNode,
    Miniflow,
    SegmentSpec,
    ensure_valid,
)

SUPPORTED_SCHEMA = 1


def load_flow(document: str | dict, known_callbacks: set[str] | None = None) -> FlowGraph:
    """Parse and fully validate one flow document (JSON text or dict)."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(f"flow document is not valid JSON: {exc}") from exc
    else:
        doc = document

    try:
        if doc.get("schema_version", SUPPORTED_SCHEMA) != SUPPORTED_SCHEMA:
            raise ParseError(f"unsupported schema_version {doc.get('schema_version')}")
        graph = FlowGraph(
            topic=doc["topic"],
            entry_policy=doc.get("entry_policy", "ordered"),
            miniflows=tuple(_parse_miniflow(mf) for mf in doc["miniflows"]),
            calendar=tuple(
                CalendarWindow(w["content_id"], w["start"], w["end"])
                for w in doc.get("calendar", [])
            ),
            ack_templates=tuple(doc.get("ack_templates", ())),
            closing_templates=tuple(doc.get("closing_templates", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed flow document: {exc!r}") from exc
    return ensure_valid(graph, known_callbacks)


def load_flow_file(path: Path, known_callbacks: set[str] | None = None) -> FlowGraph:
    return load_flow(path.read_text(encoding="utf-8"), known_callbacks)


def load_flow_dir(directory: Path, known_callbacks: set[str] | None = None) -> dict[str, FlowGraph]:
    """All ``*.json`` flow assets in a directory, keyed by topic."""
    graphs: dict[str, FlowGraph] = {}
    for path in sorted(directory.glob("*.json")):
        graph = load_flow_file(path, known_callbacks)
        if graph.topic in graphs:
            raise ParseError(f"duplicate flow for topic {graph.topic!r} in {path.name}")
        graphs[graph.topic] = graph
    return graphs


def _parse_miniflow(doc: dict) -> Miniflow:
    nodes = {}
    order = []
    for node_doc in doc["nodes"]:
        node = _parse_node(node_doc)
        nodes[node.id] = node
        order.append(node.id)
    return Miniflow(
        id=doc["id"],
        entry_node=doc["entry_node"],
        nodes=nodes,
        order=tuple(order),
        independent=doc.get("independent", True),
        score=float(doc.get("score", 0.0)),
        content_id=doc.get("content_id"),
        skip_for_returning=doc.get("skip_for_returning", False),
    )


def _parse_node(doc: dict) -> FlowNode:
    segments = tuple(
        SegmentSpec(
            kind=seg["kind"],
            part=ResponsePart(seg["part"]),
            templates=tuple(seg.get("templates", ())),
            callback=seg.get("callback"),
            params=seg.get("params", {}),
            content_id=seg.get("content_id"),
        )
        for seg in doc["segments"]
    )
    edges = tuple(
        FlowEdge(
            da_condition=frozenset(DaTag(tag) for tag in edge.get("da", [])),
            target=edge["target"],
            priority=int(edge["priority"]),
            sentiment=edge.get("sentiment"),
            entity_type=edge.get("entity_type"),
            keyword=edge.get("keyword"),
        )
        for edge in doc.get("edges", [])
    )
    return FlowNode(
        id=doc["id"],
        segments=segments,
        edges=edges,
        is_leaf=doc.get("is_leaf", False),
        capture=doc.get("capture"),
    )
