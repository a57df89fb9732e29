"""Standard callbacks available to flow assets."""

from __future__ import annotations

from typing import TYPE_CHECKING

from .callbacks import CallbackOutcome, CallbackRegistry, TemplateOption
from .engine import ComposeContext, resolve_segments, select_next_miniflow

if TYPE_CHECKING:
    from ..kg import KnowledgeGraph


def build_standard_callbacks(kg: "KnowledgeGraph | None" = None) -> CallbackRegistry:
    registry = CallbackRegistry()
    registry.register("greeting", _greeting)
    registry.register("begin_miniflow", _begin_miniflow)
    registry.register("icebreaker", _icebreaker)
    registry.register("place_comment", _make_place_comment(kg))
    return registry


def _greeting(ctx: ComposeContext, params: dict) -> CallbackOutcome:
    """New-user vs repeat-user greeting; repeat greetings may reference the
    stored name."""
    returning = ctx.profile is not None and ctx.profile.visits > 1
    if returning and ctx.profile.name:
        templates = params.get("returning_named") or params.get("returning") or []
    elif returning:
        templates = params.get("returning") or params.get("new") or []
    else:
        templates = params.get("new") or []
    return CallbackOutcome(options=[TemplateOption(t) for t in templates])


def _begin_miniflow(ctx: ComposeContext, params: dict) -> CallbackOutcome:
    """Open the next unvisited miniflow and splice its entry-node segments
    into the current response (one level deep)."""
    if ctx.depth >= 1:
        return CallbackOutcome()
    next_id = select_next_miniflow(
        ctx.graph, ctx.visited_miniflows, ctx.rng, ctx.active_content, ctx.pre_visited
    )
    if next_id is None:
        return CallbackOutcome()
    miniflow = ctx.graph.miniflow(next_id)
    entry = miniflow.node(miniflow.entry_node)
    inner = ComposeContext(
        graph=ctx.graph,
        annotation=ctx.annotation,
        profile=ctx.profile,
        captures=ctx.captures,
        capture_entities=ctx.capture_entities,
        active_content=ctx.active_content,
        rng=ctx.rng,
        callbacks=ctx.callbacks,
        visited_miniflows=ctx.visited_miniflows | {next_id},
        pre_visited=ctx.pre_visited,
        asked_icebreakers=ctx.asked_icebreakers,
        depth=ctx.depth + 1,
    )
    segments, inner_patch = resolve_segments(entry, inner)
    patch = dict(inner_patch)
    patch["_opened_miniflow"] = {"miniflow_id": next_id, "node_id": entry.id}
    return CallbackOutcome(extra_segments=segments, patch=patch)


def _icebreaker(ctx: ComposeContext, params: dict) -> CallbackOutcome:
    """One unused icebreaker question from the configured pool; selection is
    recorded on the profile so repeat visits never re-ask."""
    asked = set(ctx.asked_icebreakers)
    if ctx.profile is not None:
        asked |= set(ctx.profile.asked_icebreakers)
    pool = [entry for entry in params.get("pool", []) if entry["id"] not in asked]
    options = [
        TemplateOption(
            entry["text"],
            meta={"icebreaker_id": entry["id"]},
            patch={"profile": {"icebreakers_add": [entry["id"]]}},
        )
        for entry in pool
    ]
    return CallbackOutcome(options=options)


def _make_place_comment(kg: "KnowledgeGraph | None"):
    def place_comment(ctx: ComposeContext, params: dict) -> CallbackOutcome:
        """A knowledge-grounded remark about the captured place, falling back
        to generic praise templates."""
        options: list[TemplateOption] = []
        entity_id = ctx.capture_entities.get("place")
        if kg is not None and entity_id is not None:
            for text in kg.literal_values(entity_id, "known_for"):
                options.append(TemplateOption(text, meta={"entity_id": entity_id}))
        for template in params.get("generic", []):
            options.append(TemplateOption(template))
        return CallbackOutcome(options=options)

    return place_comment
