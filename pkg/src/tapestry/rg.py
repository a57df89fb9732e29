"""The contract between the dialogue manager and response generators.

The DM hands every generator one ResponseConditions record; generators
return zero or more three-part CandidateResponse objects that must satisfy
it. Candidates carry a serializable state patch instead of mutating
conversation state, so losing candidates leave no trace.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum

from .errors import EmptyPool
from .state import ConversationState
from .textnorm import response_hash

logger = logging.getLogger(__name__)


class ResponsePart(str, Enum):
    OPENER = "opener"
    BODY = "body"
    HANDOFF = "handoff"


class Initiative(str, Enum):
    SYSTEM = "SystemInitiative"
    USER = "UserInitiative"
    MIXED = "Mixed"


@dataclass(frozen=True)
class ResponseConditions:
    topic: str | None
    required_parts: frozenset[ResponsePart]
    must_address_question: bool = False
    initiative: Initiative = Initiative.MIXED
    forbidden_hashes: frozenset[str] = frozenset()
    max_entity_repeat: int = 3
    recent_entity_counts: dict[str, int] = field(default_factory=dict, hash=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "topic": self.topic,
            "required_parts": sorted(p.value for p in self.required_parts),
            "must_address_question": self.must_address_question,
            "initiative": self.initiative.value,
            "forbidden_hashes": len(self.forbidden_hashes),
            "max_entity_repeat": self.max_entity_repeat,
        }


@dataclass
class CandidateResponse:
    rg: str
    opener: str | None = None
    body: str | None = None
    hand_off: str | None = None
    topic: str | None = None
    entities_used: list[str] = field(default_factory=list)
    terminal: bool = False
    meta: dict = field(default_factory=dict)
    state_patch: dict = field(default_factory=dict)

    @property
    def rendered_text(self) -> str:
        parts = [p for p in (self.opener, self.body, self.hand_off) if p]
        return " ".join(parts)

    def parts_present(self) -> set[ResponsePart]:
        present = set()
        if self.opener:
            present.add(ResponsePart.OPENER)
        if self.body:
            present.add(ResponsePart.BODY)
        if self.hand_off:
            present.add(ResponsePart.HANDOFF)
        return present


class ResponseGenerator(ABC):
    """Contract every generator implements. ``generate`` must only return
    candidates that satisfy the passed conditions."""

    @abstractmethod
    def name(self) -> str: ...

    @abstractmethod
    def can_respond(self, state: ConversationState, conditions: ResponseConditions) -> bool: ...

    @abstractmethod
    def generate(
        self, state: ConversationState, conditions: ResponseConditions
    ) -> list[CandidateResponse]: ...


def validate_candidate(candidate: CandidateResponse, conditions: ResponseConditions) -> bool:
    """Required-part coverage, topic match, novelty hash, entity-repeat bound."""
    if not candidate.rendered_text.strip():
        return False
    if not conditions.required_parts <= candidate.parts_present():
        return False
    if conditions.topic is not None and candidate.topic != conditions.topic:
        return False
    if response_hash(candidate.rendered_text) in conditions.forbidden_hashes:
        return False
    for entity in candidate.entities_used:
        if conditions.recent_entity_counts.get(entity, 0) + 1 > conditions.max_entity_repeat:
            return False
    return True


def collect_candidates(
    registry: list[ResponseGenerator],
    state: ConversationState,
    conditions: ResponseConditions,
) -> list[CandidateResponse]:
    """Union of generate() output from willing generators, re-validated
    against the conditions; violators are dropped and logged. Raises
    EmptyPool when nothing survives."""
    pool: list[CandidateResponse] = []
    for rg_index, generator in enumerate(registry):
        if not generator.can_respond(state, conditions):
            continue
        for cand_index, candidate in enumerate(generator.generate(state, conditions)):
            candidate.meta.setdefault("rg_index", rg_index)
            candidate.meta.setdefault("cand_index", cand_index)
            if validate_candidate(candidate, conditions):
                pool.append(candidate)
            else:
                # Normal-path filtering (novelty and repeat bounds), so debug.
                logger.debug(
                    "dropped condition-violating candidate from %s: %r",
                    generator.name(),
                    candidate.rendered_text[:80],
                )
    if not pool:
        raise EmptyPool(f"no generator produced a valid candidate for topic {conditions.topic!r}")
    return pool
