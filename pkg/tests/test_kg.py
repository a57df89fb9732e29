"""Knowledge-graph snapshot and generator: anchoring, facts, hopping, and
the relation-once rule."""

from collections import deque

import pytest

from tapestry.dm import apply_patch
from tapestry.errors import NoAnchorAvailable, ValidationError
from tapestry.kg import (
    KgEdge,
    KgEntity,
    KgRg,
    KgScratch,
    KnowledgeGraph,
    choose_anchor,
    hop_entity,
    next_fact,
    should_hop,
    unused_fact_relations,
)
from tapestry.rg import ResponseConditions, ResponsePart
from tapestry.state import ConversationState, Speaker, Turn, UserProfile


def tv_conditions():
    return ResponseConditions(topic="tv", required_parts=frozenset({ResponsePart.BODY}))


def user_turn(state, nlu, text):
    ann = nlu.annotate(text, active_anchor=state.rg_state.get("kg", {}).get("anchor"))
    state.append_turn(
        Turn(len(state.turns), Speaker.USER, text, annotation=ann,
             entities=[m.entity_id for m in ann.entities])
    )


class TestSnapshotValidation:
    def test_shipped_snapshot_loads(self, kg):
        assert kg.has_entity("Q79784")
        assert kg.entity("Q79784").label == "Friends"

    def test_dangling_edge_rejected(self):
        with pytest.raises(ValidationError):
            KnowledgeGraph(
                entities=[KgEntity("a", "A", "T", ("a",))],
                edges=[KgEdge("a", "rel", target="missing")],
                relation_templates={},
                type_ack_templates={},
                interestingness={},
                topics=[],
            )

    def test_template_for_unknown_relation_rejected(self):
        with pytest.raises(ValidationError):
            KnowledgeGraph(
                entities=[KgEntity("a", "A", "T", ("a",))],
                edges=[],
                relation_templates={"T": {"ghost_rel": ["x"]}},
                type_ack_templates={},
                interestingness={},
                topics=[],
            )


class TestChooseAnchor:
    def test_user_mention_preferred(self, kg, nlu):
        ann = nlu.annotate("friends is one of my favorites")
        config = kg.topic_config("tv")
        assert choose_anchor(ann, KgScratch(), kg, config) == "Q79784"

    def test_fallback_when_nothing_mentioned(self, kg):
        config = kg.topic_config("tv")
        scratch = KgScratch()
        assert choose_anchor(None, scratch, kg, config) == config.fallback_entities[0]

    def test_exhausted_everything_raises(self, kg):
        config = kg.topic_config("tv")
        scratch = KgScratch(anchored_history=list(config.fallback_entities))
        # Current anchor exhausted too.
        scratch.anchor = config.fallback_entities[0]
        for relation in {e.relation for e in kg.out_edges(scratch.anchor)}:
            scratch.mark_used(scratch.anchor, relation)
        with pytest.raises(NoAnchorAvailable):
            choose_anchor(None, scratch, kg, config)

    def test_productive_anchor_kept(self, kg):
        config = kg.topic_config("tv")
        scratch = KgScratch(anchor="Q79784", anchored_history=["Q79784"])
        assert choose_anchor(None, scratch, kg, config) == "Q79784"


class TestNextFact:
    def test_highest_interestingness_first(self, kg):
        # Argmax oracle over the fixture: Jennifer Aniston's relations sorted
        # by the shipped interestingness table.
        scratch = KgScratch(anchor="Q32522")
        relations = unused_fact_relations("Q32522", scratch, kg)
        expected = sorted(relations, key=lambda r: (-kg.interest(r), r))
        assert relations == expected
        assert relations[0] == "award_received"
        result = next_fact("Q32522", scratch, kg)
        assert result is not None
        relation, text = result
        assert relation == "award_received"
        assert "Primetime Emmy Award" in text

    def test_all_used_returns_none(self, kg):
        scratch = KgScratch(anchor="Q14400")
        for relation in {e.relation for e in kg.out_edges("Q14400")}:
            scratch.mark_used("Q14400", relation)
        assert next_fact("Q14400", scratch, kg) is None

    def test_priority_comparison(self, kg):
        # trivia (8) outranks era (5) on the fixture dinosaur.
        scratch = KgScratch(anchor="Q14332")
        relation, _ = next_fact("Q14332", scratch, kg)
        assert relation == "trivia"

    def test_no_unfilled_slots_in_rendered_text(self, kg):
        for entity_id in kg.entity_ids():
            scratch = KgScratch(anchor=entity_id)
            while True:
                result = next_fact(entity_id, scratch, kg)
                if result is None:
                    break
                assert "{" not in result[1] and "}" not in result[1]


def bfs_oracle(kg, start, allowed_types, forbidden, max_dist=2):
    """Independent breadth-first search over the undirected fixture graph."""
    seen = {start}
    queue = deque([(start, 0)])
    frontier_hits = []
    while queue:
        node, dist = queue.popleft()
        if dist > 0 and kg.entity(node).type in allowed_types and node not in forbidden:
            frontier_hits.append((dist, node))
        if dist < max_dist:
            for _rel, nxt in sorted(kg.adjacent(node)):
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append((nxt, dist + 1))
    if not frontier_hits:
        return None
    best_dist = min(d for d, _ in frontier_hits)
    return [n for d, n in frontier_hits if d == best_dist]


class TestHop:
    def test_show_to_cast_member(self, kg):
        config = kg.topic_config("tv")
        scratch = KgScratch(anchor="Q79784", anchored_history=["Q79784"])
        hop = hop_entity("Q79784", scratch, kg, config)
        assert hop is not None
        entity_id, via, source = hop
        assert kg.entity(entity_id).type in config.entity_types
        oracle = bfs_oracle(kg, "Q79784", set(config.entity_types), {"Q79784"})
        assert entity_id in oracle

    def test_isolated_anchor_returns_none(self, kg):
        config = kg.topic_config("tv")
        # Mozart has no TV-typed neighbors within two hops.
        scratch = KgScratch(anchor="Q254", anchored_history=["Q254"])
        assert hop_entity("Q254", scratch, kg, config) is None

    def test_distance_one_beats_distance_two(self, kg):
        # Rachel Green: performer (Aniston, dist 1, Person) vs Friends cast
        # (dist 2 via Aniston's notable_work).
        config = kg.topic_config("tv")
        scratch = KgScratch(anchor="Q2395343", anchored_history=["Q2395343"])
        hop = hop_entity("Q2395343", scratch, kg, config)
        oracle = bfs_oracle(kg, "Q2395343", set(config.entity_types), {"Q2395343"})
        assert hop[0] in oracle

    def test_never_rehops_visited(self, kg):
        config = kg.topic_config("tv")
        scratch = KgScratch(anchor="Q79784", anchored_history=["Q79784", "Q32522", "Q210059", "Q229271"])
        hop = hop_entity("Q79784", scratch, kg, config)
        if hop is not None:
            assert hop[0] not in scratch.anchored_history


class TestShouldHop:
    def test_over_threshold(self, kg):
        config = kg.topic_config("tv")
        scratch = KgScratch(anchor="Q79784", anchor_turns=5)
        assert should_hop(scratch, kg, config) is True

    def test_under_threshold_with_facts(self, kg):
        config = kg.topic_config("tv")
        scratch = KgScratch(anchor="Q79784", anchor_turns=2)
        assert should_hop(scratch, kg, config) is False

    def test_exhausted_triggers_regardless(self, kg):
        config = kg.topic_config("tv")
        scratch = KgScratch(anchor="Q79784", anchor_turns=1)
        for relation in {e.relation for e in kg.out_edges("Q79784")}:
            scratch.mark_used("Q79784", relation)
        assert should_hop(scratch, kg, config) is True


class TestKgRgConversation:
    def test_paper_style_tv_conversation(self, kg, nlu):
        """Anchor on a mentioned show, then facts, then a hop to a person."""
        rg = KgRg(kg)
        state = ConversationState("c", seed="t:1")
        profile = UserProfile("u")
        rendered_pairs = []
        user_turn(state, nlu, "friends is one of my favorites")
        for _ in range(10):
            if not rg.can_respond(state, tv_conditions()):
                break
            cands = rg.generate(state, tv_conditions())
            if not cands:
                break
            selected = cands[0]
            rendered_pairs.extend(tuple(p) for p in selected.meta.get("rendered_pairs", []))
            apply_patch(state, profile, selected.state_patch, {"tv"})
            state.append_turn(Turn(len(state.turns), Speaker.SYSTEM, selected.rendered_text,
                                   topic="tv", rg="kg", entities=selected.entities_used))
            user_turn(state, nlu, "oh that's interesting")
        assert rendered_pairs, "conversation rendered no facts"
        assert len(rendered_pairs) == len(set(rendered_pairs)), "relation-once violated"
        anchors = state.rg_state["kg"]["anchored_history"]
        assert anchors[0] == "Q79784"
        assert len(anchors) > 1, "never hopped off the show"

    def test_context_alias_hop_to_character(self, kg, nlu):
        rg = KgRg(kg)
        state = ConversationState("c", seed="t:2")
        profile = UserProfile("u")
        user_turn(state, nlu, "friends is one of my favorites")
        cands = rg.generate(state, tv_conditions())
        apply_patch(state, profile, cands[0].state_patch, {"tv"})
        state.append_turn(Turn(len(state.turns), Speaker.SYSTEM, cands[0].rendered_text,
                               topic="tv", rg="kg"))
        user_turn(state, nlu, "i love rachel")
        assert state.turns[-1].entities == ["Q2395343"]
        cands = rg.generate(state, tv_conditions())
        assert cands and cands[0].meta["anchor"] == "Q2395343"

    def test_losing_candidate_leaves_no_trace(self, kg, nlu):
        rg = KgRg(kg)
        state = ConversationState("c", seed="t:3")
        user_turn(state, nlu, "friends is one of my favorites")
        before = dict(state.rg_state)
        rg.generate(state, tv_conditions())
        assert state.rg_state == before
