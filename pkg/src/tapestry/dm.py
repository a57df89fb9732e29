"""Turn orchestration: build conditions, collect and rank the response
pool, apply the novelty rule, commit the winner, and run the interweaving
and topic-promotion policy."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

from .errors import EmptyPool, NoTopicsRemaining
from .nlu import DaTag, NluAnnotation, NluPipeline
from .ranker import RankedPool, RankerWeights, Scorer, rank, similarity
from .rg import (
    CandidateResponse,
    Initiative,
    ResponseConditions,
    ResponseGenerator,
    ResponsePart,
    collect_candidates,
)
from .state import (
    ConversationState,
    Speaker,
    Turn,
    UserProfile,
    record_interest,
    record_topic_visit,
)
from .topics import (
    PromotionDecision,
    PromotionReason,
    SelectionMode,
    TopicHierarchy,
    handle_topic_request,
    next_topic,
)

logger = logging.getLogger(__name__)

DM_SCRATCH = "dm"
DEFAULT_APOLOGY = (
    "Hmm, I'm drawing a blank. Could you say that a different way, or pick "
    "something else you'd like to chat about?"
)
DEFAULT_CLOSING = (
    "You know, we've covered everything I had in mind for today. It's been "
    "really fun chatting with you!"
)

_ANSWER_TAGS = {DaTag.YES_ANSWER, DaTag.NO_ANSWER, DaTag.OPINION, DaTag.STATEMENT}


class RgSwitch(str, Enum):
    NONE = "none"
    WITHIN_TOPIC = "within_topic"
    NEW_TOPIC = "new_topic"


@dataclass
class TurnDecision:
    turn_index: int
    conditions: ResponseConditions
    pool_size: int
    selected: CandidateResponse
    fallback_used: bool
    rg_switch: RgSwitch
    degraded: bool
    promotion: PromotionDecision | None = None

    def to_record(self, conversation_id: str) -> dict:
        return {
            "type": "decision",
            "conversation_id": conversation_id,
            "turn_index": self.turn_index,
            "topic": self.selected.topic,
            "rg": self.selected.rg,
            "pool_size": self.pool_size,
            "fallback_used": self.fallback_used,
            "rg_switch": self.rg_switch.value,
            "degraded": self.degraded,
            "promotion_reason": self.promotion.reason.value if self.promotion else None,
            "conditions": self.conditions.to_dict(),
        }


class DialogueManager:
    def __init__(
        self,
        nlu: NluPipeline,
        registry: list[ResponseGenerator],
        hierarchy: TopicHierarchy,
        inventory: set[str],
        weights: RankerWeights | None = None,
        scorer: Scorer | None = None,
        novelty_threshold: float = 0.5,
        max_entity_repeat: int = 3,
        chime_max_turns: int = 2,
        flow_rg_name: str = "flow",
        apology_line: str = DEFAULT_APOLOGY,
        closing_line: str = DEFAULT_CLOSING,
    ):
        self.nlu = nlu
        self.registry = registry
        self.hierarchy = hierarchy
        self.inventory = inventory
        self.weights = weights or RankerWeights()
        self.scorer = scorer
        self.novelty_threshold = novelty_threshold
        self.max_entity_repeat = max_entity_repeat
        self.chime_max_turns = chime_max_turns
        self.flow_rg_name = flow_rg_name
        self.apology_line = apology_line
        self.closing_line = closing_line

    # -- public pipeline ----------------------------------------------------

    def handle_turn(
        self, state: ConversationState, profile: UserProfile, raw: str
    ) -> tuple[str, TurnDecision]:
        """One full user turn. EmptyUtterance propagates (the gateway turns
        it into a protocol error); everything else degrades to the apology
        line rather than surfacing."""
        anchor = state.rg_state.get("kg", {}).get("anchor")
        annotation = self.nlu.annotate(raw, active_anchor=anchor)
        state.append_turn(
            Turn(
                index=len(state.turns),
                speaker=Speaker.USER,
                text=raw,
                annotation=annotation,
                topic=annotation.topic,
                entities=[e.entity_id for e in annotation.entities],
            )
        )
        try:
            decision = self._decide(state, profile, annotation)
        except Exception:
            logger.exception("turn pipeline failed; emitting apology line")
            decision = self._forced_decision(state, self.apology_line, degraded=True)
        self.commit(state, profile, decision)
        return decision.selected.rendered_text, decision

    def _decide(
        self, state: ConversationState, profile: UserProfile, annotation: NluAnnotation
    ) -> TurnDecision:
        requested = handle_topic_request(annotation)
        promotion: PromotionDecision | None = None
        if requested is not None and requested.topic != state.active_topic:
            # An opinion that merely answers the system's question is not a
            # request to change the subject; only explicit switch phrasing is.
            explicit = DaTag.REQUEST_TOPIC_SWITCH in annotation.act_tags()
            if explicit or not self._acknowledging_answer(state, annotation):
                promotion = requested

        mode = SelectionMode(state.mode) if state.mode in {m.value for m in SelectionMode} else SelectionMode.HEURISTIC

        if promotion is None:
            active = state.active_topic
            if active is None or self._topic_exhausted(state, active):
                try:
                    promotion = next_topic(state, profile, self.hierarchy, mode)
                except NoTopicsRemaining:
                    return self._forced_decision(state, self.closing_line, fallback=True)

        topic = promotion.topic if promotion is not None else state.active_topic
        tried: set[str] = set()
        fallback_used = False
        for _attempt in range(4):
            conditions = self.build_conditions(state, annotation, promotion)
            tiers = self._tiers(state, annotation, topic, promotion)
            pool = self._collect_tiers(state, conditions, tiers)
            if pool is not None:
                ranked = rank(pool, state.recent_turns(), conditions, self.weights, self.scorer)
                selected, degraded = self.select_response(ranked, state)
                return TurnDecision(
                    turn_index=len(state.turns),
                    conditions=conditions,
                    pool_size=len(pool),
                    selected=selected,
                    fallback_used=fallback_used,
                    rg_switch=self._classify_switch(state, selected),
                    degraded=degraded,
                    promotion=promotion,
                )
            # Nothing for this topic: fall back to initiating the next one.
            fallback_used = True
            if topic is not None:
                tried.add(topic)
            try:
                promotion = next_topic(state, profile, self.hierarchy, mode, extra_blocked=tried)
            except NoTopicsRemaining:
                return self._forced_decision(state, self.closing_line, fallback=True)
            topic = promotion.topic
        return self._forced_decision(state, self.apology_line, degraded=True, fallback=True)

    # -- condition building ---------------------------------------------------

    def build_conditions(
        self,
        state: ConversationState,
        annotation: NluAnnotation,
        promotion: PromotionDecision | None,
    ) -> ResponseConditions:
        # User-requested topics and promotions (only issued when no topic is
        # active or the active one is exhausted) outrank the active topic.
        topic = promotion.topic if promotion is not None else state.active_topic

        # Acknowledgment turns demand an opener; the content may live in the
        # body or in a hand-off question, so Body is only required elsewhere.
        if promotion is None and self._acknowledging_answer(state, annotation):
            required = {ResponsePart.OPENER}
        else:
            required = {ResponsePart.BODY}

        if promotion is not None:
            initiative = (
                Initiative.USER
                if promotion.reason is PromotionReason.USER_REQUESTED
                else Initiative.SYSTEM
            )
        else:
            initiative = Initiative.MIXED

        counts: dict[str, int] = {}
        for turn in state.recent_turns():
            for entity in turn.entities:
                counts[entity] = counts.get(entity, 0) + 1

        return ResponseConditions(
            topic=topic,
            required_parts=frozenset(required),
            must_address_question=annotation.has_question(),
            initiative=initiative,
            forbidden_hashes=frozenset(state.used_response_hashes),
            max_entity_repeat=self.max_entity_repeat,
            recent_entity_counts=counts,
        )

    def _acknowledging_answer(self, state: ConversationState, annotation: NluAnnotation) -> bool:
        prev_system = next(
            (t for t in reversed(state.turns) if t.speaker is Speaker.SYSTEM), None
        )
        if prev_system is None or not prev_system.text.rstrip().endswith("?"):
            return False
        return bool(annotation.act_tags() & _ANSWER_TAGS)

    # -- pool collection ------------------------------------------------------

    def _tiers(
        self,
        state: ConversationState,
        annotation: NluAnnotation,
        topic: str | None,
        promotion: PromotionDecision | None,
    ) -> list[list[str]]:
        names = [rg.name() for rg in self.registry]
        flow = self.flow_rg_name if self.flow_rg_name in names else None
        others = [n for n in names if n != flow]
        if flow is None:
            return [others]
        if promotion is not None:
            return [[flow], others]

        scratch = state.rg_state.get(DM_SCRATCH, {})
        chime_turns = scratch.get("chime_turns", 0)
        suspended = topic in state.suspended_flows if topic else False
        boundary = scratch.get("boundary", False)
        # Rotate which non-flow generator leads each chime so ties in the
        # ranker alternate generators across a topic instead of always
        # favoring registry order.
        rotation = scratch.get("chime_rotation", 0) % max(1, len(others))
        others = others[rotation:] + others[:rotation]

        if suspended:
            if chime_turns >= self.chime_max_turns:
                return [[flow], others]
            if annotation.has_question():
                return [others, [flow]]
            return [[flow], others]
        if boundary and chime_turns == 0 and others:
            return [others, [flow]]
        if (
            annotation.has_question()
            and annotation.entities
            and self._flow_cursor_active(state, topic)
        ):
            return [others, [flow]]
        return [[flow], others]

    def _collect_tiers(
        self,
        state: ConversationState,
        conditions: ResponseConditions,
        tiers: list[list[str]],
    ) -> list[CandidateResponse] | None:
        by_name = {rg.name(): rg for rg in self.registry}
        for tier in tiers:
            subset = [by_name[name] for name in tier if name in by_name]
            if not subset:
                continue
            try:
                return collect_candidates(subset, state, conditions)
            except EmptyPool:
                continue
        return None

    def _topic_exhausted(self, state: ConversationState, topic: str) -> bool:
        probe = ResponseConditions(
            topic=topic,
            required_parts=frozenset({ResponsePart.BODY}),
            forbidden_hashes=frozenset(state.used_response_hashes),
            max_entity_repeat=self.max_entity_repeat,
        )
        return not any(rg.can_respond(state, probe) for rg in self.registry)

    def _flow_cursor_active(self, state: ConversationState, topic: str | None) -> bool:
        if topic is None:
            return False
        return topic in state.rg_state.get(self.flow_rg_name, {}).get("cursors", {})

    # -- selection -------------------------------------------------------------

    def select_response(
        self, ranked: RankedPool, state: ConversationState
    ) -> tuple[CandidateResponse, bool]:
        """Highest-ranked candidate under the novelty threshold against all
        prior system turns; degraded mode picks the least similar one."""
        history = [t.text for t in state.system_turns()]
        best_fallback: tuple[float, CandidateResponse] | None = None
        for candidate, _score in ranked.entries:
            max_sim = max((similarity(candidate.rendered_text, h) for h in history), default=0.0)
            if max_sim < self.novelty_threshold:
                return candidate, False
            if best_fallback is None or max_sim < best_fallback[0]:
                best_fallback = (max_sim, candidate)
        assert best_fallback is not None
        logger.warning(
            "novelty violation: best candidate similarity %.2f >= %.2f",
            best_fallback[0],
            self.novelty_threshold,
        )
        return best_fallback[1], True

    def _classify_switch(self, state: ConversationState, selected: CandidateResponse) -> RgSwitch:
        if selected.topic != state.active_topic:
            return RgSwitch.NEW_TOPIC
        if state.active_rg is not None and selected.rg != state.active_rg:
            return RgSwitch.WITHIN_TOPIC
        return RgSwitch.NONE

    def _forced_decision(
        self,
        state: ConversationState,
        line: str,
        degraded: bool = False,
        fallback: bool = False,
    ) -> TurnDecision:
        conditions = ResponseConditions(
            topic=state.active_topic, required_parts=frozenset({ResponsePart.BODY})
        )
        candidate = CandidateResponse(
            rg=DM_SCRATCH, body=line, topic=state.active_topic, meta={"forced": True}
        )
        return TurnDecision(
            turn_index=len(state.turns),
            conditions=conditions,
            pool_size=0,
            selected=candidate,
            fallback_used=fallback,
            rg_switch=RgSwitch.NONE,
            degraded=degraded,
        )

    # -- commit -----------------------------------------------------------------

    def commit(self, state: ConversationState, profile: UserProfile, decision: TurnDecision) -> None:
        """Persist only the winner: append the system turn, apply its state
        patch, move flow cursors into suspension when another generator took
        the floor, and update interweave bookkeeping. Replays are no-ops."""
        if decision.turn_index != len(state.turns):
            logger.warning("rejecting stale commit for turn %d", decision.turn_index)
            return
        selected = decision.selected
        prev_topic = state.active_topic

        flow_scratch = state.rg_state.get(self.flow_rg_name, {})
        cursors = flow_scratch.get("cursors", {})
        if selected.rg != self.flow_rg_name:
            to_suspend = []
            if selected.topic and selected.topic == prev_topic and selected.topic in cursors:
                to_suspend.append(selected.topic)
            if prev_topic and selected.topic != prev_topic and prev_topic in cursors:
                to_suspend.append(prev_topic)
            for topic in to_suspend:
                cursor_doc = cursors.pop(topic)
                cursor_doc["suspended_at_turn"] = state.user_turn_count()
                state.suspended_flows[topic] = cursor_doc

        apply_patch(state, profile, selected.state_patch, self.inventory)

        state.append_turn(
            Turn(
                index=decision.turn_index,
                speaker=Speaker.SYSTEM,
                text=selected.rendered_text,
                topic=selected.topic,
                rg=selected.rg,
                entities=list(selected.entities_used),
            )
        )

        scratch = state.rg_state.setdefault(DM_SCRATCH, {})
        if selected.rg == self.flow_rg_name:
            scratch["chime_turns"] = 0
            scratch["boundary"] = bool(selected.meta.get("at_miniflow_boundary"))
        elif selected.topic == prev_topic and selected.topic is not None:
            scratch["chime_turns"] = scratch.get("chime_turns", 0) + 1
            scratch["boundary"] = False
            scratch["chime_rotation"] = scratch.get("chime_rotation", 0) + 1
        else:
            scratch["chime_turns"] = 0
            scratch["boundary"] = False

        if selected.topic is not None:
            state.active_topic = selected.topic
        state.active_rg = selected.rg
        if selected.topic in self.inventory:
            record_topic_visit(profile, selected.topic, 1, self.inventory)


def apply_patch(
    state: ConversationState, profile: UserProfile, patch: dict, inventory: set[str]
) -> None:
    """Interpret a candidate's state patch. Keys: ``rg_state`` (deep merge,
    ``*_add`` list append), ``rg_state_replace`` (whole-document swap),
    ``profile`` (name / interests_add / icebreakers_add), and
    ``clear_suspended`` (topics whose suspension is consumed)."""
    for rg_name, sub in patch.get("rg_state", {}).items():
        target = state.rg_state.setdefault(rg_name, {})
        _merge_doc(target, sub)
    for rg_name, doc in patch.get("rg_state_replace", {}).items():
        state.rg_state[rg_name] = doc
    prof = patch.get("profile", {})
    if prof.get("name"):
        profile.name = prof["name"]
    for topic, evidence in prof.get("interests_add", []):
        if topic in inventory:
            record_interest(profile, topic, evidence, inventory)
    for icebreaker in prof.get("icebreakers_add", []):
        if icebreaker not in profile.asked_icebreakers:
            profile.asked_icebreakers.append(icebreaker)
    for topic in patch.get("clear_suspended", []):
        state.suspended_flows.pop(topic, None)


def _merge_doc(target: dict, incoming: dict) -> None:
    for key, value in incoming.items():
        if key.endswith("_add") and isinstance(value, list):
            base = key[: -len("_add")]
            existing = target.setdefault(base, [])
            if not isinstance(existing, list):
                existing = []
                target[base] = existing
            for item in value:
                if item not in existing:
                    existing.append(item)
        elif isinstance(value, dict):
            if not isinstance(target.get(key), dict):
                target[key] = {}
            _merge_doc(target[key], value)
        else:
            target[key] = value
