"""Flow execution: edge selection, response composition, miniflow
scheduling, suspension, calendar gating, and repeat-user entry variants."""

from __future__ import annotations

import itertools
import random
import re
from dataclasses import dataclass, field
from datetime import date

from ..errors import AtLeaf, UnfillableSlot
from ..nlu import NluAnnotation
from ..rg import ResponsePart
from ..state import UserProfile
from ..textnorm import normalize
from .callbacks import CallbackRegistry, TemplateOption
from .model import FlowCursor, FlowEdge, FlowGraph, FlowNode

MAX_CANDIDATES = 5
CHIME_IN_WINDOW = 2  # user turns a different generator may hold the floor
_EXHAUSTIVE_BOUND = 64
_SLOT = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


@dataclass
class ComposeContext:
    """Everything composition may draw on for one generate call."""

    graph: FlowGraph
    annotation: NluAnnotation | None = None
    profile: UserProfile | None = None
    captures: dict[str, str] = field(default_factory=dict)
    capture_entities: dict[str, str] = field(default_factory=dict)  # slot -> entity id
    active_content: set[str] | None = None  # None disables calendar gating
    rng: random.Random = field(default_factory=random.Random)
    callbacks: CallbackRegistry = field(default_factory=CallbackRegistry)
    visited_miniflows: set[str] = field(default_factory=set)
    pre_visited: set[str] = field(default_factory=set)
    asked_icebreakers: set[str] = field(default_factory=set)
    depth: int = 0

    def slot_values(self) -> dict[str, str]:
        values = dict(self.captures)
        if self.profile is not None and self.profile.name:
            values.setdefault("user_name", self.profile.name)
        return values


@dataclass
class ResolvedSegment:
    part: ResponsePart
    options: list[TemplateOption]


@dataclass
class ComposedResponse:
    opener: str | None
    body: str | None
    hand_off: str | None
    meta: dict
    patch: dict
    entities_used: list[str]

    @property
    def rendered_text(self) -> str:
        return " ".join(p for p in (self.opener, self.body, self.hand_off) if p)


def calendar_gate(today: date, graph: FlowGraph) -> set[str]:
    """Content ids whose month-day window contains today (inclusive bounds)."""
    stamp = f"{today.month:02d}-{today.day:02d}"
    return {w.content_id for w in graph.calendar if w.start <= stamp <= w.end}


def advance(graph: FlowGraph, cursor: FlowCursor, annotation: NluAnnotation) -> str:
    """Follow the highest-priority matching edge; the default edge catches
    everything else. Raises AtLeaf on leaf nodes."""
    miniflow = graph.miniflow(cursor.miniflow_id)
    node = miniflow.node(cursor.node_id)
    if node.is_leaf:
        raise AtLeaf(f"node {node.id!r} is a leaf")
    default = None
    for edge in sorted(node.edges, key=lambda e: e.priority):
        if edge.is_default:
            default = edge if default is None else default
            continue
        if _edge_matches(edge, annotation):
            return edge.target
    assert default is not None  # guaranteed by validation
    return default.target


def _edge_matches(edge: FlowEdge, annotation: NluAnnotation) -> bool:
    if not edge.da_condition & annotation.act_tags():
        return False
    if edge.sentiment is not None and annotation.sentiment.value.lower() != edge.sentiment.lower():
        return False
    if edge.entity_type is not None and not any(
        e.entity_type == edge.entity_type for e in annotation.entities
    ):
        return False
    if edge.keyword is not None:
        toks = normalize(annotation.raw).split()
        pat = edge.keyword.split()
        if not any(toks[i : i + len(pat)] == pat for i in range(len(toks) - len(pat) + 1)):
            return False
    return True


def select_next_miniflow(
    graph: FlowGraph,
    visited: set[str],
    rng: random.Random,
    active_content: set[str] | None = None,
    pre_visited: set[str] | None = None,
) -> str | None:
    """Next unvisited miniflow per the graph's entry policy; None when the
    flow is exhausted. Calendar-gated miniflows outside their window and
    pre-visited ones (repeat users) are skipped without being consumed."""
    blocked = visited | (pre_visited or set())
    available = [
        mf
        for mf in graph.miniflows
        if mf.id not in blocked
        and (mf.content_id is None or active_content is None or mf.content_id in active_content)
    ]
    if not available:
        return None
    if graph.entry_policy == "random":
        return rng.choice([mf.id for mf in available])
    if graph.entry_policy == "scored":
        return max(available, key=lambda mf: mf.score).id
    return available[0].id


def suspend(cursor: FlowCursor, user_turn: int) -> FlowCursor:
    return FlowCursor(
        topic=cursor.topic,
        miniflow_id=cursor.miniflow_id,
        node_id=cursor.node_id,
        visited_miniflows=set(cursor.visited_miniflows),
        suspended_at_turn=user_turn,
    )


def resume(graph: FlowGraph, cursor: FlowCursor, current_user_turn: int) -> FlowCursor | None:
    """The exact suspension node when within the chime-in window and still
    mid-miniflow; None directs the caller to start a fresh miniflow."""
    if cursor.suspended_at_turn is None:
        return None
    node = graph.miniflow(cursor.miniflow_id).node(cursor.node_id)
    if node.is_leaf:
        return None
    if current_user_turn - cursor.suspended_at_turn > CHIME_IN_WINDOW:
        return None
    return FlowCursor(
        topic=cursor.topic,
        miniflow_id=cursor.miniflow_id,
        node_id=cursor.node_id,
        visited_miniflows=set(cursor.visited_miniflows),
        suspended_at_turn=None,
    )


@dataclass(frozen=True)
class EntryVariant:
    returning: bool
    pre_visited: frozenset[str]


def returning_user_variant(profile: UserProfile | None, graph: FlowGraph) -> EntryVariant:
    """Repeat users skip the get-your-name style miniflows and any content
    marked as already covered for them."""
    if profile is None or profile.visits <= 1:
        return EntryVariant(False, frozenset())
    skip = {mf.id for mf in graph.miniflows if mf.skip_for_returning}
    return EntryVariant(True, frozenset(skip))


def resolve_segments(node: FlowNode, ctx: ComposeContext) -> tuple[list[ResolvedSegment], dict]:
    """Flatten a node's segments into sampled-from option lists, invoking
    callbacks (which may splice in a newly opened miniflow's segments)."""
    resolved: list[ResolvedSegment] = []
    shared_patch: dict = {}
    for seg in node.segments:
        if (
            seg.content_id is not None
            and ctx.active_content is not None
            and seg.content_id not in ctx.active_content
        ):
            continue
        if seg.kind == "template_set":
            resolved.append(
                ResolvedSegment(seg.part, [TemplateOption(t) for t in seg.templates])
            )
        else:
            outcome = ctx.callbacks.invoke(seg.callback, ctx, seg.params)
            if outcome.options:
                resolved.append(ResolvedSegment(seg.part, outcome.options))
            resolved.extend(outcome.extra_segments)
            _merge_patch(shared_patch, outcome.patch)
    return resolved, shared_patch


def compose_response(node: FlowNode, ctx: ComposeContext) -> list[ComposedResponse]:
    """Sample one text per segment, fill slots, and concatenate in segment
    order into the declared parts; repeat until five distinct candidates or
    the combination space is exhausted."""
    resolved, shared_patch = resolve_segments(node, ctx)
    resolved = [seg for seg in resolved if seg.options]
    if not resolved:
        return []

    space = 1
    for seg in resolved:
        space *= len(seg.options)

    combos: list[tuple[int, ...]]
    if space <= _EXHAUSTIVE_BOUND:
        combos = list(itertools.product(*[range(len(seg.options)) for seg in resolved]))
        ctx.rng.shuffle(combos)
    else:
        combos = [
            tuple(ctx.rng.randrange(len(seg.options)) for seg in resolved)
            for _ in range(MAX_CANDIDATES * 10)
        ]

    slot_values = ctx.slot_values()
    out: list[ComposedResponse] = []
    seen: set[str] = set()
    for combo in combos:
        if len(out) >= MAX_CANDIDATES:
            break
        parts: dict[ResponsePart, list[str]] = {p: [] for p in ResponsePart}
        patch: dict = {}
        meta_choices: list[dict] = []
        entities: list[str] = []
        _merge_patch(patch, shared_patch)
        try:
            for seg, pick in zip(resolved, combo):
                option = seg.options[pick]
                text, used_slots = _fill_slots(option.text, slot_values)
                parts[seg.part].append(text)
                if option.meta:
                    meta_choices.append(option.meta)
                if option.patch:
                    _merge_patch(patch, option.patch)
                for slot in used_slots:
                    entity = ctx.capture_entities.get(slot)
                    if entity:
                        entities.append(entity)
        except UnfillableSlot:
            continue
        opener = " ".join(parts[ResponsePart.OPENER]) or None
        body = " ".join(parts[ResponsePart.BODY]) or None
        hand_off = " ".join(parts[ResponsePart.HANDOFF]) or None
        composed = ComposedResponse(
            opener=opener,
            body=body,
            hand_off=hand_off,
            meta={"node": node.id, "choices": meta_choices},
            patch=patch,
            entities_used=entities,
        )
        if composed.rendered_text and composed.rendered_text not in seen:
            seen.add(composed.rendered_text)
            out.append(composed)
    return out


def _fill_slots(template: str, values: dict[str, str]) -> tuple[str, list[str]]:
    used: list[str] = []

    def repl(match: re.Match) -> str:
        slot = match.group(1)
        if slot not in values or not values[slot]:
            raise UnfillableSlot(slot)
        used.append(slot)
        return values[slot]

    return _SLOT.sub(repl, template), used


def _merge_patch(target: dict, incoming: dict) -> None:
    """Recursive dict merge; list values under *_add keys accumulate."""
    for key, value in incoming.items():
        if key.endswith("_add") and isinstance(value, list):
            target.setdefault(key, [])
            target[key] = target[key] + [v for v in value if v not in target[key]]
        elif isinstance(value, dict) and isinstance(target.get(key), dict):
            _merge_patch(target[key], value)
        else:
            target[key] = value
