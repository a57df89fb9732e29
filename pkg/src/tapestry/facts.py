"""Entity-indexed fun-fact retrieval and its response generator.

Fact files are JSONL, one record per fact::

    {"id": "animals-001", "topic": "animals", "entity_key": "koala",
     "lead_in": "I read this surprising fact about koalas.",
     "fact_text": "The fingerprints of a koala are ..."}

``entity_key`` is optional (null for general topic facts). The rendered
response is always lead-in followed by fact text.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import DuplicateId, ParseError, UnknownTopic
from .rg import CandidateResponse, ResponseConditions, ResponseGenerator
from .state import ConversationState, Speaker

FACT_RG = "facts"


@dataclass(frozen=True)
class FunFact:
    id: str
    topic: str
    entity_key: str | None
    lead_in: str
    fact_text: str


class FactDatabase:
    def __init__(self, facts: list[FunFact]):
        self.by_id: dict[str, FunFact] = {}
        self.by_topic: dict[str, list[FunFact]] = {}
        for fact in facts:
            if fact.id in self.by_id:
                raise DuplicateId(fact.id)
            if not fact.fact_text:
                raise ParseError(f"fact {fact.id!r} has empty text")
            self.by_id[fact.id] = fact
            self.by_topic.setdefault(fact.topic, []).append(fact)

    def counts(self) -> dict[str, int]:
        return {topic: len(facts) for topic, facts in sorted(self.by_topic.items())}

    def topics(self) -> set[str]:
        return set(self.by_topic)

    def retrieve(
        self,
        topic: str,
        entity_key: str | None,
        used: set[str],
        seed: int | str,
    ) -> FunFact | None:
        """Entity-keyed match preferred over topic-only; never a used id;
        uniform seeded choice among the remainder; None when exhausted."""
        if topic not in self.by_topic:
            raise UnknownTopic(topic)
        unused = [f for f in self.by_topic[topic] if f.id not in used]
        if not unused:
            return None
        if entity_key is not None:
            keyed = [f for f in unused if f.entity_key == entity_key]
            if keyed:
                return keyed[0]
        rng = random.Random(f"{seed}:{topic}:{len(used)}")
        return rng.choice(sorted(unused, key=lambda f: f.id))


def load_fact_db(directory: Path) -> FactDatabase:
    """All ``*.jsonl`` files under the directory as one database."""
    facts: list[FunFact] = []
    for path in sorted(directory.glob("*.jsonl")):
        for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                facts.append(
                    FunFact(
                        id=doc["id"],
                        topic=doc["topic"],
                        entity_key=doc.get("entity_key"),
                        lead_in=doc["lead_in"],
                        fact_text=doc["fact_text"],
                    )
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise ParseError(f"{path.name}:{line_no}: bad fact record ({exc!r})") from exc
    return FactDatabase(facts)


class FactRg(ResponseGenerator):
    def __init__(self, db: FactDatabase):
        self.db = db

    def name(self) -> str:
        return FACT_RG

    def _used(self, state: ConversationState) -> set[str]:
        return set(state.rg_state.get(FACT_RG, {}).get("used", []))

    def can_respond(self, state: ConversationState, conditions: ResponseConditions) -> bool:
        topic = conditions.topic
        if topic is None or topic not in self.db.by_topic:
            return False
        used = self._used(state)
        return any(f.id not in used for f in self.db.by_topic[topic])

    def generate(
        self, state: ConversationState, conditions: ResponseConditions
    ) -> list[CandidateResponse]:
        topic = conditions.topic
        if topic is None or topic not in self.db.by_topic:
            return []
        used = self._used(state)
        entity_key, asked = self._entity_key_from_context(state, topic, used)

        picks: list[FunFact] = []
        keyed = self.db.retrieve(topic, entity_key, used, state.seed) if entity_key else None
        if keyed is not None and keyed.entity_key == entity_key:
            picks.append(keyed)
        for salt in range(3):
            fact = self.db.retrieve(topic, None, used | {f.id for f in picks}, f"{state.seed}:{len(state.turns)}:{salt}")
            if fact is None:
                break
            if fact not in picks:
                picks.append(fact)
            if len(picks) >= 3:
                break

        remaining = sum(1 for f in self.db.by_topic[topic] if f.id not in used)
        out = []
        for fact in picks:
            out.append(
                CandidateResponse(
                    rg=self.name(),
                    opener=fact.lead_in,
                    body=fact.fact_text,
                    topic=topic,
                    entities_used=[],
                    terminal=remaining <= 1,
                    meta={
                        "fact_id": fact.id,
                        "entity_key": fact.entity_key,
                        "addresses_question": asked and fact.entity_key == entity_key,
                    },
                    state_patch={
                        "rg_state": {FACT_RG: {"used_add": [fact.id]}}
                    },
                )
            )
        return out

    def _entity_key_from_context(
        self, state: ConversationState, topic: str, used: set[str]
    ) -> tuple[str | None, bool]:
        """Match the user's latest keywords against the topic's entity keys."""
        last_user = next((t for t in reversed(state.turns) if t.speaker is Speaker.USER), None)
        if last_user is None or last_user.annotation is None:
            return None, False
        keywords = set(last_user.annotation.keywords)
        # Tolerate simple plurals so "koalas" still hits the koala key.
        keywords |= {k[:-2] for k in keywords if k.endswith("es") and len(k) > 4}
        keywords |= {k[:-1] for k in keywords if k.endswith("s") and len(k) > 3}
        asked = last_user.annotation.has_question()
        available_keys = {
            f.entity_key for f in self.db.by_topic[topic] if f.entity_key and f.id not in used
        }
        for key in sorted(available_keys):
            if set(key.split()) <= keywords:
                return key, asked
        return None, asked
