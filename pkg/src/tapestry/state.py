"""Conversation state, per-generator scratch state, and persistent user
profiles.

Everything here serializes to versioned JSON documents; the store contract
is a minimal namespaced get/put so the file-backed default can be swapped
for a real database without touching callers.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

from .errors import IndexMismatch, StoreUnavailable, UnknownTopic
from .nlu import NluAnnotation
from .textnorm import response_hash

SCHEMA_VERSION = 1


class Speaker(str, Enum):
    USER = "user"
    SYSTEM = "system"


@dataclass
class Turn:
    index: int
    speaker: Speaker
    text: str
    annotation: NluAnnotation | None = None
    topic: str | None = None
    rg: str | None = None
    entities: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "speaker": self.speaker.value,
            "text": self.text,
            "annotation": self.annotation.to_dict() if self.annotation else None,
            "topic": self.topic,
            "rg": self.rg,
            "entities": list(self.entities),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Turn":
        return cls(
            index=doc["index"],
            speaker=Speaker(doc["speaker"]),
            text=doc["text"],
            annotation=NluAnnotation.from_dict(doc["annotation"]) if doc.get("annotation") else None,
            topic=doc.get("topic"),
            rg=doc.get("rg"),
            entities=list(doc.get("entities", [])),
        )


@dataclass
class ConversationState:
    conversation_id: str
    user_id: str | None = None
    mode: str = "heuristic"
    seed: str = ""
    turns: list[Turn] = field(default_factory=list)
    active_topic: str | None = None
    active_rg: str | None = None
    rg_state: dict[str, dict] = field(default_factory=dict)
    used_response_hashes: set[str] = field(default_factory=set)
    suspended_flows: dict[str, dict] = field(default_factory=dict)
    ended: bool = False

    def append_turn(self, turn: Turn) -> None:
        """Extend the history; system turns register their novelty hash."""
        if turn.index != len(self.turns):
            raise IndexMismatch(
                f"turn index {turn.index} does not extend history of length {len(self.turns)}"
            )
        self.turns.append(turn)
        if turn.speaker is Speaker.SYSTEM:
            self.used_response_hashes.add(response_hash(turn.text))

    def system_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.speaker is Speaker.SYSTEM]

    def user_turn_count(self) -> int:
        return sum(1 for t in self.turns if t.speaker is Speaker.USER)

    def visited_topics(self) -> set[str]:
        """Topics the system has actually taken up in this conversation."""
        return {t.topic for t in self.turns if t.topic is not None and t.speaker is Speaker.SYSTEM}

    def recent_turns(self, n: int = 5) -> list[Turn]:
        return self.turns[-n:]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "conversation_id": self.conversation_id,
            "user_id": self.user_id,
            "mode": self.mode,
            "seed": self.seed,
            "turns": [t.to_dict() for t in self.turns],
            "active_topic": self.active_topic,
            "active_rg": self.active_rg,
            "rg_state": self.rg_state,
            "used_response_hashes": sorted(self.used_response_hashes),
            "suspended_flows": self.suspended_flows,
            "ended": self.ended,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ConversationState":
        return cls(
            conversation_id=doc["conversation_id"],
            user_id=doc.get("user_id"),
            mode=doc.get("mode", "heuristic"),
            seed=doc.get("seed", ""),
            turns=[Turn.from_dict(t) for t in doc["turns"]],
            active_topic=doc.get("active_topic"),
            active_rg=doc.get("active_rg"),
            rg_state=doc.get("rg_state", {}),
            used_response_hashes=set(doc.get("used_response_hashes", [])),
            suspended_flows=doc.get("suspended_flows", {}),
            ended=doc.get("ended", False),
        )


@dataclass
class Interest:
    topic: str
    evidence: str
    recorded_at: float

    def to_dict(self) -> dict:
        return {"topic": self.topic, "evidence": self.evidence, "recorded_at": self.recorded_at}


@dataclass
class UserProfile:
    user_id: str
    name: str | None = None
    interests: list[Interest] = field(default_factory=list)
    topics_discussed: dict[str, int] = field(default_factory=dict)
    visits: int = 1
    asked_icebreakers: list[str] = field(default_factory=list)

    def undiscussed_interests(self) -> list[Interest]:
        """Interests never yet discussed in any conversation, most recent first."""
        pending = [i for i in self.interests if self.topics_discussed.get(i.topic, 0) == 0]
        return sorted(pending, key=lambda i: i.recorded_at, reverse=True)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "user_id": self.user_id,
            "name": self.name,
            "interests": [i.to_dict() for i in self.interests],
            "topics_discussed": dict(self.topics_discussed),
            "visits": self.visits,
            "asked_icebreakers": list(self.asked_icebreakers),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "UserProfile":
        return cls(
            user_id=doc["user_id"],
            name=doc.get("name"),
            interests=[Interest(i["topic"], i["evidence"], i["recorded_at"]) for i in doc.get("interests", [])],
            topics_discussed=dict(doc.get("topics_discussed", {})),
            visits=doc.get("visits", 1),
            asked_icebreakers=list(doc.get("asked_icebreakers", [])),
        )


def record_interest(
    profile: UserProfile,
    topic: str,
    evidence: str,
    inventory: set[str],
    now: float | None = None,
) -> None:
    """Append an interest, deduplicated by topic with the latest evidence kept."""
    if topic not in inventory:
        raise UnknownTopic(topic)
    ts = time.time() if now is None else now
    profile.interests = [i for i in profile.interests if i.topic != topic]
    profile.interests.append(Interest(topic, evidence, ts))


def record_topic_visit(profile: UserProfile, topic: str, turns: int, inventory: set[str]) -> None:
    if topic not in inventory:
        raise UnknownTopic(topic)
    profile.topics_discussed[topic] = profile.topics_discussed.get(topic, 0) + turns


class KeyValueStore(Protocol):
    """Namespaced document store; distinct keys tolerate concurrent access."""

    def get(self, namespace: str, key: str) -> dict | None: ...

    def put(self, namespace: str, key: str, doc: dict) -> None: ...

    def keys(self, namespace: str) -> list[str]: ...


class MemoryStore:
    """Dict-backed store for tests and the in-process REPL."""

    def __init__(self):
        self._data: dict[tuple[str, str], dict] = {}

    def get(self, namespace: str, key: str) -> dict | None:
        doc = self._data.get((namespace, key))
        return json.loads(json.dumps(doc)) if doc is not None else None

    def put(self, namespace: str, key: str, doc: dict) -> None:
        self._data[(namespace, key)] = json.loads(json.dumps(doc))

    def keys(self, namespace: str) -> list[str]:
        return sorted(k for ns, k in self._data if ns == namespace)


class FileStore:
    """One JSON file per key under ``root/namespace/``; writes are atomic
    (tmp file + rename) so a crash never leaves a torn document."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreUnavailable(str(exc)) from exc

    def _path(self, namespace: str, key: str) -> Path:
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in key)
        return self.root / namespace / f"{safe}.json"

    def get(self, namespace: str, key: str) -> dict | None:
        path = self._path(namespace, key)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise StoreUnavailable(str(exc)) from exc

    def put(self, namespace: str, key: str, doc: dict) -> None:
        path = self._path(namespace, key)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(f".tmp.{os.getpid()}")
            tmp.write_text(json.dumps(doc, ensure_ascii=False, indent=None), encoding="utf-8")
            tmp.replace(path)
        except OSError as exc:
            raise StoreUnavailable(str(exc)) from exc

    def keys(self, namespace: str) -> list[str]:
        ns_dir = self.root / namespace
        if not ns_dir.exists():
            return []
        return sorted(p.stem for p in ns_dir.glob("*.json"))


CONVERSATIONS = "conversations"
PROFILES = "profiles"


def load_state(store: KeyValueStore, conversation_id: str) -> ConversationState | None:
    doc = store.get(CONVERSATIONS, conversation_id)
    return ConversationState.from_dict(doc) if doc else None


def save_state(store: KeyValueStore, state: ConversationState) -> None:
    store.put(CONVERSATIONS, state.conversation_id, state.to_dict())


def load_profile(store: KeyValueStore, user_id: str) -> UserProfile:
    """Existing profile, or a fresh one with visits=1 for unknown users."""
    doc = store.get(PROFILES, user_id)
    return UserProfile.from_dict(doc) if doc else UserProfile(user_id=user_id)


def save_profile(store: KeyValueStore, profile: UserProfile) -> None:
    store.put(PROFILES, profile.user_id, profile.to_dict())
