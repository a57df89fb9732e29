"""Flow-based response generator: drives per-topic flow graphs through the
DM contract, handling starts, advances, miniflow transitions, suspension
recovery, and user-fact captures."""

from __future__ import annotations

import hashlib
import random
import re
from datetime import date
from typing import TYPE_CHECKING, Callable

from ..nlu import NluAnnotation
from ..rg import CandidateResponse, ResponseConditions, ResponseGenerator, ResponsePart
from ..state import ConversationState, Speaker, UserProfile
from ..textnorm import normalize
from .callbacks import CallbackRegistry
from .engine import (
    ComposeContext,
    advance,
    calendar_gate,
    compose_response,
    resume,
    returning_user_variant,
    select_next_miniflow,
)
from .model import FlowCursor, FlowGraph, FlowNode, SegmentSpec

if TYPE_CHECKING:
    from ..kg import KnowledgeGraph

FLOW_RG = "flow"

ProfileProvider = Callable[[ConversationState], UserProfile | None]


def rng_for(state: ConversationState, rg_name: str) -> random.Random:
    """Deterministic per-(conversation, turn, generator) stream so losing
    candidates never perturb later sampling."""
    key = f"{state.seed}:{len(state.turns)}:{rg_name}".encode("utf-8")
    return random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "big"))


class FlowRg(ResponseGenerator):
    def __init__(
        self,
        graphs: dict[str, FlowGraph],
        callbacks: CallbackRegistry,
        inventory: set[str],
        profile_provider: ProfileProvider | None = None,
        today_fn: Callable[[], date] | None = None,
        kg: "KnowledgeGraph | None" = None,
    ):
        self.graphs = graphs
        self.callbacks = callbacks
        self.inventory = inventory
        self.profile_provider = profile_provider or (lambda state: None)
        self.today_fn = today_fn or date.today
        self.kg = kg

    def name(self) -> str:
        return FLOW_RG

    # -- contract ---------------------------------------------------------

    def can_respond(self, state: ConversationState, conditions: ResponseConditions) -> bool:
        topic = conditions.topic
        if topic is None or topic not in self.graphs:
            return False
        graph = self.graphs[topic]
        rng = rng_for(state, self.name())
        active = calendar_gate(self.today_fn(), graph)
        profile = self.profile_provider(state)
        variant = returning_user_variant(profile, graph)

        cursor = self._active_cursor(state, topic)
        suspended = state.suspended_flows.get(topic)
        if cursor is None and suspended is None:
            return (
                select_next_miniflow(graph, set(), rng, active, set(variant.pre_visited))
                is not None
            )
        probe = cursor or FlowCursor.from_dict(suspended)
        node = graph.miniflow(probe.miniflow_id).node(probe.node_id)
        if cursor is not None and not node.is_leaf:
            return True
        if suspended is not None and resume(graph, probe, state.user_turn_count()) is not None:
            return True
        return (
            select_next_miniflow(graph, probe.visited_miniflows, rng, active, set(variant.pre_visited))
            is not None
        )

    def generate(
        self, state: ConversationState, conditions: ResponseConditions
    ) -> list[CandidateResponse]:
        topic = conditions.topic
        if topic is None or topic not in self.graphs:
            return []
        graph = self.graphs[topic]
        rng = rng_for(state, self.name())
        active = calendar_gate(self.today_fn(), graph)
        profile = self.profile_provider(state)
        variant = returning_user_variant(profile, graph)
        annotation = self._last_user_annotation(state)
        scratch = state.rg_state.get(FLOW_RG, {})
        captures = dict(scratch.get("captures", {}))
        capture_entities = dict(scratch.get("capture_entities", {}))
        asked = set(scratch.get("asked_icebreakers", []))

        cursor = self._active_cursor(state, topic)
        suspended_doc = state.suspended_flows.get(topic)
        profile_patch: dict = {}
        clear_suspended = False

        if cursor is None and suspended_doc is not None:
            suspended = FlowCursor.from_dict(suspended_doc)
            clear_suspended = True
            resumed = resume(graph, suspended, state.user_turn_count())
            if resumed is not None:
                cursor = resumed
            else:
                return self._transition(
                    graph, suspended.visited_miniflows, rng, active, variant,
                    annotation, profile, captures, capture_entities, asked,
                    topic, conditions, profile_patch, clear_suspended=True,
                )

        if cursor is None:
            first = select_next_miniflow(graph, set(), rng, active, set(variant.pre_visited))
            if first is None:
                return []
            miniflow = graph.miniflow(first)
            entry = miniflow.node(miniflow.entry_node)
            new_cursor = FlowCursor(topic, first, entry.id, {first} | set(variant.pre_visited))
            return self._compose_at(
                graph, entry, new_cursor, rng, active, variant, annotation, profile,
                captures, capture_entities, asked, topic, conditions, profile_patch,
                clear_suspended=False,
            )

        miniflow = graph.miniflow(cursor.miniflow_id)
        node = miniflow.node(cursor.node_id)
        if node.is_leaf:
            return self._transition(
                graph, cursor.visited_miniflows, rng, active, variant, annotation,
                profile, captures, capture_entities, asked, topic, conditions,
                profile_patch, clear_suspended,
            )

        if annotation is None:
            return []
        if node.capture:
            self._apply_capture(node.capture, annotation, captures, capture_entities, profile_patch)
        target_id = advance(graph, cursor, annotation)
        target = miniflow.node(target_id)
        next_cursor = FlowCursor(topic, miniflow.id, target.id, set(cursor.visited_miniflows))

        if target.is_leaf and not self._has_body(target, active):
            # Ack-only leaf: fold the ack into the next miniflow's intro, or
            # close out the topic when nothing is left.
            next_id = select_next_miniflow(
                graph, next_cursor.visited_miniflows, rng, active, set(variant.pre_visited)
            )
            if next_id is not None:
                entry_mf = graph.miniflow(next_id)
                entry = entry_mf.node(entry_mf.entry_node)
                merged = FlowNode(
                    id=f"{target.id}+{entry.id}",
                    segments=target.segments + entry.segments,
                    edges=entry.edges,
                    is_leaf=entry.is_leaf,
                )
                next_cursor = FlowCursor(
                    topic, next_id, entry.id, next_cursor.visited_miniflows | {next_id}
                )
                return self._compose_at(
                    graph, merged, next_cursor, rng, active, variant, annotation, profile,
                    captures, capture_entities, asked, topic, conditions, profile_patch,
                    clear_suspended,
                )
            if graph.closing_templates:
                merged = FlowNode(
                    id=f"{target.id}+closing",
                    segments=target.segments
                    + (SegmentSpec("template_set", ResponsePart.BODY, graph.closing_templates),),
                    edges=(),
                    is_leaf=True,
                )
                return self._compose_at(
                    graph, merged, next_cursor, rng, active, variant, annotation, profile,
                    captures, capture_entities, asked, topic, conditions, profile_patch,
                    clear_suspended,
                )
        return self._compose_at(
            graph, target, next_cursor, rng, active, variant, annotation, profile,
            captures, capture_entities, asked, topic, conditions, profile_patch,
            clear_suspended,
        )

    # -- helpers ----------------------------------------------------------

    def _transition(
        self, graph, visited, rng, active, variant, annotation, profile,
        captures, capture_entities, asked, topic, conditions, profile_patch,
        clear_suspended,
    ) -> list[CandidateResponse]:
        """Start the next miniflow with a short transition opener."""
        next_id = select_next_miniflow(graph, visited, rng, active, set(variant.pre_visited))
        if next_id is None:
            return []
        miniflow = graph.miniflow(next_id)
        entry = miniflow.node(miniflow.entry_node)
        segments = entry.segments
        if graph.ack_templates and not any(
            s.part is ResponsePart.OPENER for s in entry.segments
        ):
            segments = (
                SegmentSpec("template_set", ResponsePart.OPENER, graph.ack_templates),
            ) + segments
        node = FlowNode(id=f"transition+{entry.id}", segments=segments, edges=entry.edges,
                        is_leaf=entry.is_leaf)
        cursor = FlowCursor(topic, next_id, entry.id, set(visited) | {next_id})
        return self._compose_at(
            graph, node, cursor, rng, active, variant, annotation, profile, captures,
            capture_entities, asked, topic, conditions, profile_patch, clear_suspended,
        )

    def _compose_at(
        self, graph, node, cursor, rng, active, variant, annotation, profile,
        captures, capture_entities, asked, topic, conditions, profile_patch,
        clear_suspended,
    ) -> list[CandidateResponse]:
        ctx = ComposeContext(
            graph=graph,
            annotation=annotation,
            profile=profile,
            captures=captures,
            capture_entities=capture_entities,
            active_content=active,
            rng=rng,
            callbacks=self.callbacks,
            visited_miniflows=set(cursor.visited_miniflows),
            pre_visited=set(variant.pre_visited),
            asked_icebreakers=asked,
        )
        composed = compose_response(node, ctx)
        out = []
        for item in composed:
            final_cursor = cursor
            opened = item.patch.pop("_opened_miniflow", None)
            if opened:
                final_cursor = FlowCursor(
                    topic,
                    opened["miniflow_id"],
                    opened["node_id"],
                    set(cursor.visited_miniflows) | {opened["miniflow_id"]},
                )
            landed = graph.miniflow(final_cursor.miniflow_id).node(final_cursor.node_id)
            more = _has_unvisited(graph, final_cursor.visited_miniflows, active, set(variant.pre_visited))
            terminal = landed.is_leaf and not more
            patch: dict = {
                "rg_state": {
                    FLOW_RG: {
                        "cursors": {topic: final_cursor.to_dict()},
                        "captures": captures,
                        "capture_entities": capture_entities,
                    }
                }
            }
            icebreaker_ids = [
                m["icebreaker_id"] for m in item.meta.get("choices", []) if "icebreaker_id" in m
            ]
            if icebreaker_ids:
                patch["rg_state"][FLOW_RG]["asked_icebreakers"] = sorted(asked | set(icebreaker_ids))
            for key, value in item.patch.items():
                _deep_merge(patch, {key: value})
            if profile_patch:
                _deep_merge(patch, {"profile": profile_patch})
            if clear_suspended:
                patch["clear_suspended"] = [topic]
            out.append(
                CandidateResponse(
                    rg=self.name(),
                    opener=item.opener,
                    body=item.body,
                    hand_off=item.hand_off,
                    topic=topic,
                    entities_used=item.entities_used,
                    terminal=terminal,
                    meta={
                        "miniflow": final_cursor.miniflow_id,
                        "node": final_cursor.node_id,
                        "at_miniflow_boundary": landed.is_leaf,
                        "choices": item.meta.get("choices", []),
                    },
                    state_patch=patch,
                )
            )
        return out

    def _has_body(self, node: FlowNode, active: set[str]) -> bool:
        for seg in node.segments:
            if seg.content_id is not None and seg.content_id not in active:
                continue
            if seg.part in (ResponsePart.BODY, ResponsePart.HANDOFF):
                return True
        return False

    def _active_cursor(self, state: ConversationState, topic: str) -> FlowCursor | None:
        doc = state.rg_state.get(FLOW_RG, {}).get("cursors", {}).get(topic)
        return FlowCursor.from_dict(doc) if doc else None

    def _last_user_annotation(self, state: ConversationState) -> NluAnnotation | None:
        for turn in reversed(state.turns):
            if turn.speaker is Speaker.USER:
                return turn.annotation
        return None

    def _apply_capture(
        self,
        capture: dict,
        annotation: NluAnnotation,
        captures: dict[str, str],
        capture_entities: dict[str, str],
        profile_patch: dict,
    ) -> None:
        slot = capture["slot"]
        kind = capture["kind"]
        if kind == "name":
            name = _extract_name(annotation.raw)
            if name:
                captures[slot] = name
                profile_patch["name"] = name
        elif kind == "place":
            wanted_type = capture.get("entity_type", "TravelDestination")
            mention = next((e for e in annotation.entities if e.entity_type == wanted_type), None)
            if mention is None and annotation.entities:
                mention = annotation.entities[0]
            if mention is not None:
                label = self.kg.entity(mention.entity_id).label if self.kg else mention.surface
                captures[slot] = label
                capture_entities[slot] = mention.entity_id
        elif kind == "interest":
            if annotation.topic and annotation.topic in self.inventory:
                evidence = normalize(annotation.raw)[:80]
                existing = profile_patch.setdefault("interests_add", [])
                existing.append([annotation.topic, evidence])
        elif kind == "keyword":
            if annotation.keywords:
                captures[slot] = annotation.keywords[0]
        elif kind == "text":
            value = normalize(annotation.raw)[:60]
            if value:
                captures[slot] = value


_NAME_PREFIXES = re.compile(
    r"^(my name is|my names|the names|i am|im|its|it is|call me|this is|name is|names)\s+",
)


def _extract_name(raw: str) -> str | None:
    norm = normalize(raw)
    norm = _NAME_PREFIXES.sub("", norm)
    toks = norm.split()
    if not toks:
        return None
    stop = {"yes", "no", "okay", "ok", "well", "um", "uh"}
    for tok in toks:
        if tok not in stop and tok.isalpha():
            return tok.capitalize()
    return None


def _has_unvisited(
    graph: FlowGraph, visited: set[str], active: set[str], pre_visited: set[str]
) -> bool:
    blocked = visited | pre_visited
    return any(
        mf.id not in blocked and (mf.content_id is None or mf.content_id in active)
        for mf in graph.miniflows
    )


def _deep_merge(target: dict, incoming: dict) -> None:
    for key, value in incoming.items():
        if key.endswith("_add") and isinstance(value, list):
            target.setdefault(key, [])
            target[key] = target[key] + [v for v in value if v not in target[key]]
        elif isinstance(value, dict) and isinstance(target.get(key), dict):
            _deep_merge(target[key], value)
        else:
            target[key] = value
