"""Topic hierarchy and promotion decisions, with optional per-user
personalization.

The hierarchy is a score-ordered topic list (scores typically come from the
analytics Z-score pipeline); promotion walks profile interests first in
personalized mode, then the hierarchy, never repeating a topic within one
conversation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import EmptyInventory, NoTopicsRemaining, ParseError, UnknownTopic
from .nlu import DaTag, NluAnnotation
from .state import ConversationState, UserProfile


class PromotionReason(str, Enum):
    PERSONALIZED = "Personalized"
    HIERARCHY_DEFAULT = "HierarchyDefault"
    OVERRIDE = "Override"
    USER_REQUESTED = "UserRequested"


class SelectionMode(str, Enum):
    PERSONALIZED = "personalized"
    HEURISTIC = "heuristic"


@dataclass(frozen=True)
class TopicHierarchy:
    ordered: tuple[tuple[str, float], ...]
    overrides: tuple[str, ...]
    built_at: float

    def topics(self) -> list[str]:
        return [t for t, _ in self.ordered]


@dataclass(frozen=True)
class PromotionDecision:
    topic: str
    reason: PromotionReason


def build_hierarchy(scores: dict[str, float], overrides: list[str] | None = None) -> TopicHierarchy:
    """Descending score order, alphabetical ties, overrides pinned first in
    their given order."""
    if not scores:
        raise EmptyInventory("no topics configured")
    overrides = list(overrides or [])
    for topic in overrides:
        if topic not in scores:
            raise UnknownTopic(f"override {topic!r} not in inventory")
    tail = sorted(
        ((t, s) for t, s in scores.items() if t not in overrides),
        key=lambda item: (-item[1], item[0]),
    )
    head = [(t, scores[t]) for t in overrides]
    return TopicHierarchy(tuple(head + tail), tuple(overrides), time.time())


def load_hierarchy_file(path: Path) -> TopicHierarchy:
    """Parse the ``topic <TAB> score <TAB> pinned`` hierarchy file."""
    scores: dict[str, float] = {}
    overrides: list[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"bad hierarchy line: {line!r}")
        topic, score, pinned = parts
        if topic in scores:
            raise ParseError(f"duplicate topic {topic!r}")
        scores[topic] = float(score)
        if pinned == "1":
            overrides.append(topic)
    return build_hierarchy(scores, overrides)


def next_topic(
    state: ConversationState,
    profile: UserProfile,
    hierarchy: TopicHierarchy,
    mode: SelectionMode,
    extra_blocked: set[str] | None = None,
) -> PromotionDecision:
    """Pick the next topic to initiate: undiscussed profile interests first
    in personalized mode, hierarchy order otherwise. Never returns the
    active topic or a topic already visited this conversation."""
    visited = state.visited_topics()
    blocked = visited | ({state.active_topic} if state.active_topic else set())
    blocked |= extra_blocked or set()

    if mode is SelectionMode.PERSONALIZED:
        for interest in profile.undiscussed_interests():
            if interest.topic not in blocked and interest.topic in dict(hierarchy.ordered):
                return PromotionDecision(interest.topic, PromotionReason.PERSONALIZED)

    for topic, _score in hierarchy.ordered:
        if topic in blocked:
            continue
        reason = (
            PromotionReason.OVERRIDE
            if topic in hierarchy.overrides
            else PromotionReason.HIERARCHY_DEFAULT
        )
        return PromotionDecision(topic, reason)
    raise NoTopicsRemaining("every topic in the hierarchy has been visited")


_REQUEST_TAGS = {DaTag.REQUEST_TOPIC_SWITCH, DaTag.COMMAND, DaTag.OPINION}


def handle_topic_request(annotation: NluAnnotation) -> PromotionDecision | None:
    """A user-initiated topic: the utterance names a topic and carries a
    request-like dialogue act."""
    if annotation.topic is None:
        return None
    if annotation.act_tags() & _REQUEST_TAGS:
        return PromotionDecision(annotation.topic, PromotionReason.USER_REQUESTED)
    return None
