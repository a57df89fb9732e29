"""Local knowledge-graph snapshot and the KG-grounded response generator.

Snapshot format (JSON, one file, ``schema_version`` 1)::

    {
      "schema_version": 1,
      "entities": [{"id", "label", "type", "aliases": [...],
                    "context_aliases": {"<anchor entity id>": ["alias", ...]}}],
      "edges": [{"source", "relation", "target"} |
                {"source", "relation", "value"}],          # value = literal
      "relation_templates": {"<entity type>": {"<relation>": ["...{anchor}...{target}..."]}},
      "type_ack_templates": {"<entity type>": ["...{anchor}..."]},
      "interestingness": {"<relation>": int},
      "topics": [{"topic", "entity_types": [1..3 types], "switch_threshold",
                  "fallback_entities": [...], "initiation_templates": [...],
                  "fallback_intro_templates": [...]}]
    }

The generator anchors on an entity, renders relation-grounded facts (each
relation at most once per entity), hops to nearby entities when an anchor
is exhausted or overstayed, and falls back to curated entities when the
user supplies none.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

from .errors import NoAnchorAvailable, ParseError, ValidationError
from .rg import CandidateResponse, ResponseConditions, ResponseGenerator
from .state import ConversationState, Speaker
from .textnorm import normalize

if TYPE_CHECKING:
    from .nlu import NluAnnotation

KG_RG = "kg"
SUPPORTED_SCHEMA = 1
DEFAULT_SWITCH_THRESHOLD = 4
MAX_HOP_DISTANCE = 2


@dataclass(frozen=True)
class KgEntity:
    id: str
    label: str
    type: str
    aliases: tuple[str, ...] = ()


@dataclass(frozen=True)
class KgEdge:
    source: str
    relation: str
    target: str | None = None  # entity id
    value: str | None = None  # literal


@dataclass(frozen=True)
class TopicKgConfig:
    topic: str
    entity_types: tuple[str, ...]
    switch_threshold: int = DEFAULT_SWITCH_THRESHOLD
    fallback_entities: tuple[str, ...] = ()
    initiation_templates: tuple[str, ...] = ()
    fallback_intro_templates: tuple[str, ...] = ()


class KnowledgeGraph:
    def __init__(
        self,
        entities: list[KgEntity],
        edges: list[KgEdge],
        relation_templates: dict[str, dict[str, list[str]]],
        type_ack_templates: dict[str, list[str]],
        interestingness: dict[str, int],
        topics: list[TopicKgConfig],
        context_aliases: dict[str, dict[str, str]] | None = None,
    ):
        self._entities = {e.id: e for e in entities}
        self._edges = edges
        self.relation_templates = relation_templates
        self.type_ack_templates = type_ack_templates
        self.interestingness = interestingness
        self._topics = {t.topic: t for t in topics}
        self._context_aliases = context_aliases or {}

        self._alias_index: dict[str, str] = {}
        for entity in entities:
            for alias in entity.aliases:
                self._alias_index[normalize(alias)] = entity.id
        self._out: dict[str, list[KgEdge]] = {}
        self._adjacent: dict[str, list[tuple[str, str]]] = {}
        for edge in edges:
            self._out.setdefault(edge.source, []).append(edge)
            if edge.target is not None:
                self._adjacent.setdefault(edge.source, []).append((edge.relation, edge.target))
                self._adjacent.setdefault(edge.target, []).append((edge.relation, edge.source))
        self._max_alias_tokens = max(
            (len(a.split()) for a in self._alias_index), default=1
        )
        self._validate()

    def _validate(self) -> None:
        findings = []
        for edge in self._edges:
            if edge.source not in self._entities:
                findings.append(f"edge source {edge.source!r} unknown")
            if edge.target is not None and edge.target not in self._entities:
                findings.append(f"edge target {edge.target!r} unknown")
            if (edge.target is None) == (edge.value is None):
                findings.append(f"edge {edge.source}-{edge.relation}: exactly one of target/value")
        known_relations = {e.relation for e in self._edges}
        for etype, by_relation in self.relation_templates.items():
            for relation in by_relation:
                if relation not in known_relations:
                    findings.append(f"template for unknown relation {relation!r} ({etype})")
        for anchor_id, aliases in self._context_aliases.items():
            if anchor_id not in self._entities:
                findings.append(f"context alias anchor {anchor_id!r} unknown")
            for target in aliases.values():
                if target not in self._entities:
                    findings.append(f"context alias target {target!r} unknown")
        for config in self._topics.values():
            if not 1 <= len(config.entity_types) <= 3:
                findings.append(f"topic {config.topic!r}: needs 1..3 entity types")
            for fallback in config.fallback_entities:
                if fallback not in self._entities:
                    findings.append(f"topic {config.topic!r}: unknown fallback {fallback!r}")
        if findings:
            raise ValidationError(findings)

    # -- lookups ----------------------------------------------------------

    def entity(self, entity_id: str) -> KgEntity:
        return self._entities[entity_id]

    def has_entity(self, entity_id: str) -> bool:
        return entity_id in self._entities

    def entity_ids(self) -> list[str]:
        return sorted(self._entities)

    def resolve_alias(self, phrase: str, active_anchor: str | None = None) -> str | None:
        if not phrase:
            return None
        if active_anchor is not None:
            scoped = self._context_aliases.get(active_anchor, {})
            hit = scoped.get(phrase)
            if hit is not None:
                return hit
        return self._alias_index.get(phrase)

    def max_alias_tokens(self) -> int:
        ctx_max = max(
            (len(a.split()) for scoped in self._context_aliases.values() for a in scoped),
            default=1,
        )
        return max(self._max_alias_tokens, ctx_max)

    def out_edges(self, entity_id: str) -> list[KgEdge]:
        return list(self._out.get(entity_id, []))

    def adjacent(self, entity_id: str) -> list[tuple[str, str]]:
        return list(self._adjacent.get(entity_id, []))

    def literal_values(self, entity_id: str, relation: str) -> list[str]:
        return [
            e.value
            for e in self._out.get(entity_id, [])
            if e.relation == relation and e.value is not None
        ]

    def templates_for(self, entity_type: str, relation: str) -> list[str]:
        return list(self.relation_templates.get(entity_type, {}).get(relation, []))

    def ack_templates_for(self, entity_type: str) -> list[str]:
        return list(self.type_ack_templates.get(entity_type, []))

    def interest(self, relation: str) -> int:
        return self.interestingness.get(relation, 0)

    def topic_config(self, topic: str) -> TopicKgConfig | None:
        return self._topics.get(topic)

    def topics(self) -> list[str]:
        return sorted(self._topics)


def load_kg(path: Path) -> KnowledgeGraph:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"KG snapshot is not valid JSON: {exc}") from exc
    if doc.get("schema_version", SUPPORTED_SCHEMA) != SUPPORTED_SCHEMA:
        raise ParseError(f"unsupported KG schema_version {doc.get('schema_version')}")
    try:
        entities = [
            KgEntity(e["id"], e["label"], e["type"], tuple(e.get("aliases", ())))
            for e in doc["entities"]
        ]
        context_aliases: dict[str, dict[str, str]] = {}
        for e in doc["entities"]:
            for anchor_id, aliases in e.get("context_aliases", {}).items():
                scoped = context_aliases.setdefault(anchor_id, {})
                for alias in aliases:
                    scoped[normalize(alias)] = e["id"]
        edges = [
            KgEdge(e["source"], e["relation"], e.get("target"), e.get("value"))
            for e in doc["edges"]
        ]
        topics = [
            TopicKgConfig(
                topic=t["topic"],
                entity_types=tuple(t["entity_types"]),
                switch_threshold=t.get("switch_threshold", DEFAULT_SWITCH_THRESHOLD),
                fallback_entities=tuple(t.get("fallback_entities", ())),
                initiation_templates=tuple(t.get("initiation_templates", ())),
                fallback_intro_templates=tuple(t.get("fallback_intro_templates", ())),
            )
            for t in doc.get("topics", [])
        ]
        return KnowledgeGraph(
            entities,
            edges,
            doc.get("relation_templates", {}),
            doc.get("type_ack_templates", {}),
            doc.get("interestingness", {}),
            topics,
            context_aliases,
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed KG snapshot: {exc!r}") from exc


@dataclass
class KgScratch:
    """Conversation-scoped generator state (serialized under rg_state)."""

    anchor: str | None = None
    used_relations: dict[str, list[str]] = field(default_factory=dict)
    anchor_turns: int = 0
    anchored_history: list[str] = field(default_factory=list)
    fallback_used: dict[str, list[str]] = field(default_factory=dict)
    initiated: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "anchor": self.anchor,
            "used_relations": {k: sorted(v) for k, v in self.used_relations.items()},
            "anchor_turns": self.anchor_turns,
            "anchored_history": list(self.anchored_history),
            "fallback_used": {k: list(v) for k, v in self.fallback_used.items()},
            "initiated": list(self.initiated),
        }

    @classmethod
    def from_dict(cls, doc: dict | None) -> "KgScratch":
        doc = doc or {}
        return cls(
            anchor=doc.get("anchor"),
            used_relations={k: list(v) for k, v in doc.get("used_relations", {}).items()},
            anchor_turns=doc.get("anchor_turns", 0),
            anchored_history=list(doc.get("anchored_history", [])),
            fallback_used={k: list(v) for k, v in doc.get("fallback_used", {}).items()},
            initiated=list(doc.get("initiated", [])),
        )

    def mark_used(self, entity_id: str, relation: str) -> None:
        self.used_relations.setdefault(entity_id, [])
        if relation not in self.used_relations[entity_id]:
            self.used_relations[entity_id].append(relation)


def unused_fact_relations(anchor: str, scratch: KgScratch, kg: KnowledgeGraph) -> list[str]:
    """Relations of the anchor with a template and no prior rendering for
    this anchor, best-first (interestingness desc, id asc)."""
    entity = kg.entity(anchor)
    used = set(scratch.used_relations.get(anchor, []))
    relations = sorted(
        {
            e.relation
            for e in kg.out_edges(anchor)
            if e.relation not in used and kg.templates_for(entity.type, e.relation)
        },
        key=lambda r: (-kg.interest(r), r),
    )
    return relations


def render_fact(anchor: str, relation: str, kg: KnowledgeGraph, pick: int = 0) -> str:
    entity = kg.entity(anchor)
    edges = sorted(
        (e for e in kg.out_edges(anchor) if e.relation == relation),
        key=lambda e: (e.value or kg.entity(e.target).label),
    )
    edge = edges[0]
    target_text = edge.value if edge.value is not None else kg.entity(edge.target).label
    templates = kg.templates_for(entity.type, relation)
    template = templates[pick % len(templates)]
    return template.replace("{anchor}", entity.label).replace("{target}", target_text)


def next_fact(
    anchor: str, scratch: KgScratch, kg: KnowledgeGraph, pick: int = 0
) -> tuple[str, str] | None:
    """Render the best unused relation of the anchor and mark it used;
    None when the anchor is exhausted."""
    relations = unused_fact_relations(anchor, scratch, kg)
    if not relations:
        return None
    relation = relations[0]
    text = render_fact(anchor, relation, kg, pick)
    scratch.mark_used(anchor, relation)
    return relation, text


def should_hop(scratch: KgScratch, kg: KnowledgeGraph, config: TopicKgConfig) -> bool:
    if scratch.anchor is None:
        return False
    exhausted = not unused_fact_relations(scratch.anchor, scratch, kg)
    return exhausted or scratch.anchor_turns > config.switch_threshold


def hop_entity(
    anchor: str, scratch: KgScratch, kg: KnowledgeGraph, config: TopicKgConfig
) -> tuple[str, str, str] | None:
    """Breadth-first hop (path length <= 2) to the nearest allowed-type
    entity not previously anchored. Returns (entity id, via relation,
    via source) or None."""
    visited_anchors = set(scratch.anchored_history) | {anchor}
    seen = {anchor}
    queue: deque[tuple[str, int, str, str]] = deque()
    for relation, neighbor in sorted(kg.adjacent(anchor)):
        if neighbor not in seen:
            seen.add(neighbor)
            queue.append((neighbor, 1, relation, anchor))
    while queue:
        entity_id, dist, via_relation, via_source = queue.popleft()
        entity = kg.entity(entity_id)
        if entity.type in config.entity_types and entity_id not in visited_anchors:
            return entity_id, via_relation, via_source
        if dist < MAX_HOP_DISTANCE:
            for relation, neighbor in sorted(kg.adjacent(entity_id)):
                if neighbor not in seen:
                    seen.add(neighbor)
                    queue.append((neighbor, dist + 1, relation, entity_id))
    return None


def choose_anchor(
    annotation: "NluAnnotation | None",
    scratch: KgScratch,
    kg: KnowledgeGraph,
    config: TopicKgConfig,
) -> str:
    """User-mentioned allowed entity first, then a still-productive current
    anchor, then the fallback queue."""
    if annotation is not None:
        for mention in annotation.entities:
            if (
                mention.entity_type in config.entity_types
                and mention.entity_id not in scratch.anchored_history
                and kg.has_entity(mention.entity_id)
            ):
                return mention.entity_id
    if scratch.anchor is not None and unused_fact_relations(scratch.anchor, scratch, kg):
        return scratch.anchor
    used = set(scratch.fallback_used.get(config.topic, [])) | set(scratch.anchored_history)
    for fallback in config.fallback_entities:
        if fallback not in used:
            return fallback
    raise NoAnchorAvailable(f"no anchor candidates left for topic {config.topic!r}")


_ACK_OPENERS = (
    "Oh, interesting.",
    "Good to know.",
    "Gotcha.",
    "I hear you.",
    "Fair enough.",
)


class KgRg(ResponseGenerator):
    def __init__(self, kg: KnowledgeGraph):
        self.kg = kg

    def name(self) -> str:
        return KG_RG

    def can_respond(self, state: ConversationState, conditions: ResponseConditions) -> bool:
        config = self.kg.topic_config(conditions.topic) if conditions.topic else None
        if config is None:
            return False
        scratch = KgScratch.from_dict(state.rg_state.get(KG_RG))
        annotation = self._last_user_annotation(state)
        if annotation is not None and any(
            m.entity_type in config.entity_types
            and m.entity_id not in scratch.anchored_history
            and self.kg.has_entity(m.entity_id)
            for m in annotation.entities
        ):
            return True
        if scratch.anchor is not None and unused_fact_relations(scratch.anchor, scratch, self.kg):
            return True
        if scratch.anchor is not None and hop_entity(scratch.anchor, scratch, self.kg, config):
            return True
        if config.topic not in scratch.initiated and config.initiation_templates:
            return True
        used = set(scratch.fallback_used.get(config.topic, [])) | set(scratch.anchored_history)
        return any(f not in used for f in config.fallback_entities)

    def generate(
        self, state: ConversationState, conditions: ResponseConditions
    ) -> list[CandidateResponse]:
        topic = conditions.topic
        config = self.kg.topic_config(topic) if topic else None
        if config is None:
            return []
        scratch = KgScratch.from_dict(state.rg_state.get(KG_RG))
        annotation = self._last_user_annotation(state)
        out: list[CandidateResponse] = []

        mentioned = None
        if annotation is not None:
            mentioned = next(
                (
                    m
                    for m in annotation.entities
                    if m.entity_type in config.entity_types
                    and m.entity_id not in scratch.anchored_history
                    and self.kg.has_entity(m.entity_id)
                ),
                None,
            )

        if mentioned is not None and mentioned.entity_id != scratch.anchor:
            return self._anchor_candidates(
                state, scratch, config, mentioned.entity_id, topic, user_driven=True
            )
        if scratch.anchor is not None and should_hop(scratch, self.kg, config):
            hop = hop_entity(scratch.anchor, scratch, self.kg, config)
            if hop is not None:
                return self._hop_candidates(state, scratch, config, hop, topic)
        if scratch.anchor is not None and unused_fact_relations(scratch.anchor, scratch, self.kg):
            out.extend(self._fact_candidates(state, scratch, config, topic))
        elif topic not in scratch.initiated and config.initiation_templates:
            out.extend(self._initiation_candidates(state, scratch, config, topic))
        else:
            try:
                fallback = choose_anchor(None, scratch, self.kg, config)
            except NoAnchorAvailable:
                return []
            out.extend(self._fallback_candidates(state, scratch, config, fallback, topic))
        return out

    # -- candidate builders -------------------------------------------------

    def _anchor_candidates(self, state, scratch, config, entity_id, topic, user_driven):
        entity = self.kg.entity(entity_id)
        base = self._rebase(scratch, entity_id)
        acks = self.kg.ack_templates_for(entity.type)
        out = []
        for i, template in enumerate(acks[:3]):
            text = template.replace("{anchor}", entity.label)
            patch_scratch = _copy_scratch(base)
            out.append(
                self._candidate(
                    topic,
                    opener=None,
                    body=text,
                    entity_ids=[entity_id],
                    meta={
                        "anchor": entity_id,
                        "kind": "anchor_ack",
                        "addresses_question": user_driven,
                        "cand": i,
                    },
                    scratch=patch_scratch,
                    terminal=False,
                )
            )
        # Also offer ack + first fact as one fuller turn.
        fact_scratch = _copy_scratch(base)
        fact = next_fact(entity_id, fact_scratch, self.kg)
        if fact is not None:
            relation, text = fact
            out.append(
                self._candidate(
                    topic,
                    opener=f"{entity.label} is a good one.",
                    body=text,
                    entity_ids=[entity_id],
                    meta={
                        "anchor": entity_id,
                        "kind": "anchor_fact",
                        "relation": relation,
                        "rendered_pairs": [[entity_id, relation]],
                        "addresses_question": user_driven,
                    },
                    scratch=fact_scratch,
                    terminal=False,
                )
            )
        return out

    def _fact_candidates(self, state, scratch, config, topic):
        anchor = scratch.anchor
        relations = unused_fact_relations(anchor, scratch, self.kg)
        out = []
        for i, relation in enumerate(relations[:2]):
            work = _copy_scratch(scratch)
            work.anchor_turns += 1
            text = render_fact(anchor, relation, self.kg)
            work.mark_used(anchor, relation)
            opener = _ACK_OPENERS[(len(state.turns) + i) % len(_ACK_OPENERS)]
            out.append(
                self._candidate(
                    topic,
                    opener=opener,
                    body=text,
                    entity_ids=[anchor],
                    meta={
                        "anchor": anchor,
                        "kind": "fact",
                        "relation": relation,
                        "rendered_pairs": [[anchor, relation]],
                    },
                    scratch=work,
                    terminal=not unused_fact_relations(anchor, work, self.kg)
                    and hop_entity(anchor, work, self.kg, config) is None,
                )
            )
        return out

    def _hop_candidates(self, state, scratch, config, hop, topic):
        entity_id, via_relation, via_source = hop
        old_anchor = scratch.anchor
        entity = self.kg.entity(entity_id)
        work = _copy_scratch(scratch)
        rendered = []

        # Narrate the connecting edge only if that (entity, relation) pair has
        # never been rendered; otherwise jump straight to the new anchor.
        opener = None
        source_entity = self.kg.entity(via_source)
        hop_templates = self.kg.templates_for(source_entity.type, via_relation)
        if hop_templates and via_relation not in work.used_relations.get(via_source, []):
            opener = (
                hop_templates[0]
                .replace("{anchor}", source_entity.label)
                .replace("{target}", entity.label)
            )
            work.mark_used(via_source, via_relation)
            rendered.append([via_source, via_relation])
        work = self._rebase(work, entity_id)
        fact = next_fact(entity_id, work, self.kg)
        body = None
        meta: dict = {
            "anchor": entity_id,
            "kind": "hop",
            "hopped_from": old_anchor,
            "via": via_relation,
            "rendered_pairs": rendered,
        }
        if fact is not None:
            relation, body = fact
            meta["relation"] = relation
            meta["rendered_pairs"] = rendered + [[entity_id, relation]]
        else:
            meta["rendered_pairs"] = rendered
        if opener is None and body is None:
            return []
        if body is None:
            body, opener = opener, None
        return [
            self._candidate(
                topic,
                opener=opener,
                body=body,
                entity_ids=[entity_id],
                meta=meta,
                scratch=work,
                terminal=False,
            )
        ]

    def _initiation_candidates(self, state, scratch, config, topic):
        work = _copy_scratch(scratch)
        work.initiated.append(topic)
        out = []
        for i, template in enumerate(config.initiation_templates[:3]):
            out.append(
                self._candidate(
                    topic,
                    opener=None,
                    body=template,
                    entity_ids=[],
                    meta={"kind": "initiation", "cand": i},
                    scratch=work,
                    terminal=False,
                )
            )
        return out

    def _fallback_candidates(self, state, scratch, config, entity_id, topic):
        entity = self.kg.entity(entity_id)
        work = _copy_scratch(scratch)
        work.fallback_used.setdefault(topic, [])
        if entity_id not in work.fallback_used[topic]:
            work.fallback_used[topic].append(entity_id)
        work = self._rebase(work, entity_id)
        templates = config.fallback_intro_templates or (
            "I have been thinking about {anchor} lately. Do you know it?",
        )
        out = []
        for i, template in enumerate(templates[:3]):
            out.append(
                self._candidate(
                    topic,
                    opener=None,
                    body=template.replace("{anchor}", entity.label),
                    entity_ids=[entity_id],
                    meta={"anchor": entity_id, "kind": "fallback_intro", "cand": i},
                    scratch=_copy_scratch(work),
                    terminal=False,
                )
            )
        return out

    # -- plumbing -----------------------------------------------------------

    def _rebase(self, scratch: KgScratch, entity_id: str) -> KgScratch:
        work = _copy_scratch(scratch)
        if work.anchor != entity_id:
            if work.anchor is not None and work.anchor not in work.anchored_history:
                work.anchored_history.append(work.anchor)
            work.anchor = entity_id
            work.anchor_turns = 1
            if entity_id not in work.anchored_history:
                work.anchored_history.append(entity_id)
        return work

    def _candidate(self, topic, opener, body, entity_ids, meta, scratch, terminal):
        return CandidateResponse(
            rg=self.name(),
            opener=opener,
            body=body,
            hand_off=None,
            topic=topic,
            entities_used=entity_ids,
            terminal=terminal,
            meta=meta,
            state_patch={"rg_state_replace": {KG_RG: scratch.to_dict()}},
        )

    def _last_user_annotation(self, state: ConversationState):
        for turn in reversed(state.turns):
            if turn.speaker is Speaker.USER:
                return turn.annotation
        return None


def _copy_scratch(scratch: KgScratch) -> KgScratch:
    return KgScratch.from_dict(scratch.to_dict())
