"""Session gateway: engine assembly, per-conversation turn serialization,
persistence and event logging, the HTTP wire protocol, and a development
REPL.

Wire protocol (JSON over HTTP, ``schema_version`` 1):

    POST /session                    {"user_id"?, "mode"?}
        -> {"schema_version", "conversation_id", "turn_index", "reply",
            "topic", "rg"}
    POST /session/{id}/message       {"text"}
        -> {"schema_version", "conversation_id", "turn_index", "reply",
            "topic", "rg", "degraded"}
    POST /session/{id}/end           {"rating"?}
        -> {"ok": true, "already_ended": bool}
    GET  /session/{id}/transcript
        -> {"schema_version", "conversation_id", "mode", "ended",
            "turns": [{"index", "speaker", "text", "topic", "rg"}]}
    GET  /health                     -> {"ok": true}

Errors: 404 {"error": "unknown_conversation"}, 400 {"error": "empty_utterance"}.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import threading
import time
from pathlib import Path

from .analytics import main as report_main
from .config import EngineConfig
from .dm import DialogueManager, TurnDecision
from .errors import EmptyUtterance, UnknownConversation
from .facts import FactRg, load_fact_db
from .flow import FlowRg, build_standard_callbacks, load_flow_dir
from .kg import KgRg, load_kg
from .nlu import NluPipeline, RuleTables
from .ranker import rank
from .rg import ResponseConditions, ResponsePart, collect_candidates
from .state import (
    ConversationState,
    FileStore,
    KeyValueStore,
    MemoryStore,
    load_profile,
    load_state,
    save_profile,
    save_state,
)
from .topics import SelectionMode, load_hierarchy_file

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
INTRO_TOPIC = "intro"


class Engine:
    """Everything behind the wire protocol: assets, generators, DM, store,
    logs, and per-conversation locks."""

    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        assets = self.config.assets_dir

        self.kg = load_kg(assets / "kg" / "snapshot.json")
        self.rules = RuleTables.load(assets / "nlu")
        self.hierarchy = load_hierarchy_file(assets / "topics.txt")
        self.inventory = set(self.hierarchy.topics())
        self.nlu = NluPipeline(self.rules, self.kg, self.inventory)

        callbacks = build_standard_callbacks(self.kg)
        self.flow_rg = FlowRg(
            load_flow_dir(assets / "flows", callbacks.names()),
            callbacks,
            self.inventory,
            profile_provider=self._profile_for_state,
            today_fn=self._today,
            kg=self.kg,
        )
        self.fact_db = load_fact_db(assets / "facts")
        self.registry = [self.flow_rg, KgRg(self.kg), FactRg(self.fact_db)]
        self.dm = DialogueManager(
            nlu=self.nlu,
            registry=self.registry,
            hierarchy=self.hierarchy,
            inventory=self.inventory,
            weights=self.config.ranker_weights,
            novelty_threshold=self.config.novelty_threshold,
            max_entity_repeat=self.config.max_entity_repeat,
            chime_max_turns=self.config.chime_max_turns,
            apology_line=self.config.apology_line,
            closing_line=self.config.closing_line,
        )

        self.store: KeyValueStore
        if self.config.store_dir is not None:
            self.store = FileStore(self.config.store_dir)
            self._events_path = Path(self.config.store_dir) / "events.jsonl"
            self._ratings_path = Path(self.config.store_dir) / "ratings.jsonl"
        else:
            self.store = MemoryStore()
            self._events_path = None
            self._ratings_path = None
        self.events: list[dict] = []  # in-memory mirror (authoritative when no store_dir)
        self.ratings: list[dict] = []

        self._log_lock = threading.Lock()
        self._locks_guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}
        self._counter_lock = threading.Lock()
        self._session_counter = len(self.store.keys("conversations"))
        self._session_rng = random.Random(f"sessions:{self.config.seed}")
        self._last_activity: dict[str, float] = {}

    # -- session lifecycle -----------------------------------------------

    def start_session(self, user_id: str | None = None, mode: str | None = None) -> dict:
        conversation_id = self._new_conversation_id()
        uid = user_id or f"anon-{conversation_id}"
        known = self.store.get("profiles", uid) is not None
        profile = load_profile(self.store, uid)
        if known:
            profile.visits += 1
        save_profile(self.store, profile)

        resolved_mode = self._resolve_mode(mode, conversation_id)
        state = ConversationState(
            conversation_id=conversation_id,
            user_id=uid,
            mode=resolved_mode,
            seed=f"{self.config.seed}:{conversation_id}",
        )
        greeting_decision = self._greet(state, profile)
        save_state(self.store, state)
        save_profile(self.store, profile)
        self._touch(conversation_id)
        self._log(
            {
                "type": "session_start",
                "schema_version": SCHEMA_VERSION,
                "conversation_id": conversation_id,
                "user_id": uid,
                "mode": resolved_mode,
                "ts": time.time(),
            }
        )
        self._log_turn(state, 0)
        self._log(greeting_decision.to_record(conversation_id))
        return {
            "schema_version": SCHEMA_VERSION,
            "conversation_id": conversation_id,
            "turn_index": 0,
            "reply": state.turns[0].text,
            "topic": state.turns[0].topic,
            "rg": state.turns[0].rg,
        }

    def post_utterance(self, conversation_id: str, text: str) -> dict:
        lock = self._lock_for(conversation_id)
        with lock:
            state = load_state(self.store, conversation_id)
            if state is None or state.ended:
                raise UnknownConversation(conversation_id)
            profile = load_profile(self.store, state.user_id)
            reply, decision = self.dm.handle_turn(state, profile, text)
            save_state(self.store, state)
            save_profile(self.store, profile)
            self._touch(conversation_id)
            self._log_turn(state, len(state.turns) - 2)
            self._log_turn(state, len(state.turns) - 1)
            self._log(decision.to_record(conversation_id))
            system_turn = state.turns[-1]
            return {
                "schema_version": SCHEMA_VERSION,
                "conversation_id": conversation_id,
                "turn_index": system_turn.index,
                "reply": reply,
                "topic": system_turn.topic,
                "rg": system_turn.rg,
                "degraded": decision.degraded,
            }

    def end_session(self, conversation_id: str, rating: int | None = None) -> dict:
        lock = self._lock_for(conversation_id)
        with lock:
            state = load_state(self.store, conversation_id)
            if state is None:
                raise UnknownConversation(conversation_id)
            if state.ended:
                return {"ok": True, "already_ended": True}
            state.ended = True
            save_state(self.store, state)
            started = self._session_started_at(conversation_id)
            duration = (time.time() - started) / 60.0 if started else None
            if rating is not None:
                record = {"conversation_id": conversation_id, "rating": int(rating)}
                self.ratings.append(record)
                if self._ratings_path is not None:
                    with self._log_lock:
                        with self._ratings_path.open("a", encoding="utf-8") as fh:
                            fh.write(json.dumps(record) + "\n")
            self._log(
                {
                    "type": "session_end",
                    "conversation_id": conversation_id,
                    "rating": rating,
                    "turns": len(state.turns),
                    "duration_minutes": duration,
                    "ts": time.time(),
                }
            )
            self._last_activity.pop(conversation_id, None)
            return {"ok": True, "already_ended": False}

    def transcript(self, conversation_id: str) -> dict:
        state = load_state(self.store, conversation_id)
        if state is None:
            raise UnknownConversation(conversation_id)
        return {
            "schema_version": SCHEMA_VERSION,
            "conversation_id": conversation_id,
            "mode": state.mode,
            "ended": state.ended,
            "turns": [
                {
                    "index": t.index,
                    "speaker": t.speaker.value,
                    "text": t.text,
                    "topic": t.topic,
                    "rg": t.rg,
                }
                for t in state.turns
            ],
        }

    def expire_idle(self, now: float | None = None) -> int:
        """End sessions idle past the configured timeout (rating=none)."""
        if self.config.idle_timeout_minutes is None:
            return 0
        now = time.time() if now is None else now
        cutoff = self.config.idle_timeout_minutes * 60.0
        expired = [cid for cid, ts in list(self._last_activity.items()) if now - ts > cutoff]
        for cid in expired:
            try:
                self.end_session(cid, rating=None)
            except UnknownConversation:
                pass
        return len(expired)

    # -- internals ----------------------------------------------------------

    def _greet(self, state: ConversationState, profile) -> TurnDecision:
        conditions = ResponseConditions(
            topic=INTRO_TOPIC, required_parts=frozenset({ResponsePart.BODY})
        )
        pool = collect_candidates([self.flow_rg], state, conditions)
        ranked = rank(pool, [], conditions, self.config.ranker_weights)
        selected, degraded = self.dm.select_response(ranked, state)
        decision = TurnDecision(
            turn_index=0,
            conditions=conditions,
            pool_size=len(pool),
            selected=selected,
            fallback_used=False,
            rg_switch=self.dm._classify_switch(state, selected),
            degraded=degraded,
        )
        self.dm.commit(state, profile, decision)
        return decision

    def _today(self):
        from datetime import date

        return self.config.today or date.today()

    def _profile_for_state(self, state: ConversationState):
        if state.user_id is None:
            return None
        return load_profile(self.store, state.user_id)

    def _resolve_mode(self, mode: str | None, conversation_id: str) -> str:
        chosen = mode or self.config.mode
        if chosen == "auto":
            roll = random.Random(f"{self.config.seed}:mode:{conversation_id}").random()
            chosen = (
                SelectionMode.PERSONALIZED.value
                if roll < self.config.ab_personalized_ratio
                else SelectionMode.HEURISTIC.value
            )
        return chosen

    def _new_conversation_id(self) -> str:
        with self._counter_lock:
            self._session_counter += 1
            n = self._session_counter
        tag = hashlib.sha256(f"{self.config.seed}:{n}".encode()).hexdigest()[:6]
        return f"c{n:05d}-{tag}"

    def _lock_for(self, conversation_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(conversation_id, threading.Lock())

    def _touch(self, conversation_id: str) -> None:
        self._last_activity[conversation_id] = time.time()

    def _session_started_at(self, conversation_id: str) -> float | None:
        for record in self.events:
            if record.get("type") == "session_start" and record.get("conversation_id") == conversation_id:
                return record.get("ts")
        return None

    def _log(self, record: dict) -> None:
        with self._log_lock:
            self.events.append(record)
            if self._events_path is not None:
                with self._events_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    def _log_turn(self, state: ConversationState, index: int) -> None:
        turn = state.turns[index]
        self._log(
            {
                "type": "turn",
                "conversation_id": state.conversation_id,
                "index": turn.index,
                "speaker": turn.speaker.value,
                "text": turn.text,
                "topic": turn.topic,
                "rg": turn.rg,
                "ts": time.time(),
            }
        )


# -- HTTP app -------------------------------------------------------------

from pydantic import BaseModel


class StartRequest(BaseModel):
    user_id: str | None = None
    mode: str | None = None


class MessageRequest(BaseModel):
    text: str


class EndRequest(BaseModel):
    rating: int | None = None


def create_app(engine: Engine):
    from fastapi import FastAPI, HTTPException
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="tapestry gateway", version="1")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get("/health")
    def health() -> dict:
        return {"ok": True}

    @app.post("/session")
    def start_session(body: StartRequest | None = None) -> dict:
        body = body or StartRequest()
        return engine.start_session(user_id=body.user_id, mode=body.mode)

    @app.post("/session/{conversation_id}/message")
    def post_message(conversation_id: str, body: MessageRequest) -> dict:
        try:
            return engine.post_utterance(conversation_id, body.text)
        except UnknownConversation:
            raise HTTPException(status_code=404, detail={"error": "unknown_conversation"})
        except EmptyUtterance:
            raise HTTPException(status_code=400, detail={"error": "empty_utterance"})

    @app.post("/session/{conversation_id}/end")
    def end_session(conversation_id: str, body: EndRequest | None = None) -> dict:
        body = body or EndRequest()
        try:
            return engine.end_session(conversation_id, body.rating)
        except UnknownConversation:
            raise HTTPException(status_code=404, detail={"error": "unknown_conversation"})

    @app.get("/session/{conversation_id}/transcript")
    def transcript(conversation_id: str) -> dict:
        try:
            return engine.transcript(conversation_id)
        except UnknownConversation:
            raise HTTPException(status_code=404, detail={"error": "unknown_conversation"})

    return app


def serve(config: EngineConfig, host: str = "127.0.0.1", port: int = 8840) -> None:
    import uvicorn

    engine = Engine(config)
    app = create_app(engine)
    uvicorn.run(app, host=host, port=port, log_level="warning")


# -- REPL -------------------------------------------------------------------


def run_repl(config: EngineConfig, user_id: str | None = None, mode: str | None = None) -> None:
    engine = Engine(config)
    opened = engine.start_session(user_id=user_id, mode=mode)
    conversation_id = opened["conversation_id"]
    print(f"[{opened['topic']}/{opened['rg']}] {opened['reply']}")
    print("(/rate N to rate, /quit to leave)")
    while True:
        try:
            line = input("you> ").strip()
        except (EOFError, KeyboardInterrupt):
            print()
            break
        if not line:
            continue
        if line.startswith("/quit"):
            engine.end_session(conversation_id)
            break
        if line.startswith("/rate"):
            parts = line.split()
            rating = int(parts[1]) if len(parts) > 1 and parts[1].isdigit() else None
            engine.end_session(conversation_id, rating)
            print("thanks, bye!")
            return
        try:
            reply = engine.post_utterance(conversation_id, line)
        except EmptyUtterance:
            print("(say something first)")
            continue
        print(f"[{reply['topic']}/{reply['rg']}] {reply['reply']}")


__all__ = ["Engine", "create_app", "serve", "run_repl", "report_main"]
