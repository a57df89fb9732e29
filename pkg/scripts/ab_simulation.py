"""Personalized-vs-heuristic topic selection A/B experiment over simulated
users.

Each simulated user carries two declared interests seeded into their profile
(as if learned in an earlier conversation). A session runs a fixed number of
user turns of generic chat; satisfaction is modeled as a base rating plus
one point when at least one declared interest actually got discussed. The
report is the analytics module's Welch-tested A/B table.

Run:  python scripts/ab_simulation.py --sessions 500 --seed 9
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
import time
from datetime import date
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))
logging.basicConfig(level=logging.ERROR)

from tapestry.analytics import ab_report, load_conversations
from tapestry.config import EngineConfig
from tapestry.gateway import Engine
from tapestry.state import UserProfile, record_interest, save_profile

INTEREST_TOPICS = [
    "animals", "video_games", "music", "hobbies", "comic_books",
    "harry_potter", "nature", "travel", "sports", "dinosaurs",
]

GENERIC_REPLIES = [
    "yeah definitely",
    "that's interesting",
    "i'm not sure honestly",
    "sounds good",
    "okay",
    "wow i never knew that",
    "nice",
    "i think so",
    "not really",
    "good question",
    "that is a fun one",
    "hmm maybe",
]


def simulate(
    sessions_per_arm: int,
    seed: int = 9,
    turns_per_session: int = 18,
    store_dir: Path | None = None,
    base_rating: tuple[int, ...] = (3, 4),
) -> dict:
    config = EngineConfig(
        seed=seed,
        today=date(2021, 6, 1),
        store_dir=store_dir,
        mode="auto",
    )
    engine = Engine(config)
    rng = random.Random(f"ab:{seed}")

    plans = []
    for arm in ("personalized", "heuristic"):
        for i in range(sessions_per_arm):
            plans.append((arm, f"{arm[0]}user{i:04d}"))
    rng.shuffle(plans)

    for arm, user_id in plans:
        user_rng = random.Random(f"{seed}:{user_id}")
        interests = user_rng.sample(INTEREST_TOPICS, 2)
        profile = UserProfile(user_id=user_id)
        for topic in interests:
            record_interest(profile, topic, f"declared interest in {topic}",
                            engine.inventory, now=user_rng.random())
        save_profile(engine.store, profile)

        opened = engine.start_session(user_id=user_id, mode=arm)
        cid = opened["conversation_id"]
        discussed: set[str] = {opened["topic"]} if opened["topic"] else set()
        session_turns = turns_per_session + user_rng.randint(-3, 3)
        for _ in range(session_turns):
            reply = engine.post_utterance(cid, user_rng.choice(GENERIC_REPLIES))
            if reply["topic"]:
                discussed.add(reply["topic"])
        hit = bool(set(interests) & discussed)
        rating = min(5, user_rng.choice(base_rating) + (1 if hit else 0))
        engine.end_session(cid, rating=rating)

    if store_dir is not None:
        convs = load_conversations(store_dir / "events.jsonl", store_dir / "ratings.jsonl")
    else:
        convs = _conversations_from_memory(engine)
    return ab_report(convs)


def _conversations_from_memory(engine: Engine) -> list:
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        events = Path(tmp) / "events.jsonl"
        with events.open("w", encoding="utf-8") as fh:
            for record in engine.events:
                fh.write(json.dumps(record) + "\n")
        ratings = Path(tmp) / "ratings.jsonl"
        with ratings.open("w", encoding="utf-8") as fh:
            for record in engine.ratings:
                fh.write(json.dumps(record) + "\n")
        return load_conversations(events, ratings)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sessions", type=int, default=500, help="sessions per arm")
    parser.add_argument("--turns", type=int, default=18, help="user turns per session")
    parser.add_argument("--seed", type=int, default=9)
    parser.add_argument("--store", type=Path, default=None, help="persist logs here")
    parser.add_argument("--json", type=Path, default=None)
    args = parser.parse_args(argv)

    started = time.monotonic()
    report = simulate(args.sessions, seed=args.seed, turns_per_session=args.turns,
                      store_dir=args.store)
    elapsed = time.monotonic() - started

    p = report["personalized"]
    h = report["heuristic"]
    print(f"personalized: n={p['convs']} rating={p['mean_rating']:.3f} length={p['mean_length']:.2f}")
    print(f"   heuristic: n={h['convs']} rating={h['mean_rating']:.3f} length={h['mean_length']:.2f}")
    print(f"    p-values: rating={report['rating_p_value']:.2e} length={report['length_p_value']:.2e}")
    print(f"     elapsed: {elapsed:.1f}s")
    if args.json:
        args.json.write_text(json.dumps(report, indent=2), encoding="utf-8")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
