"""Run the scripted music conversation that shows three generators taking
turns on one topic, and print the transcript with topic/generator badges.

Run:  python scripts/run_demo.py [--seed 7] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))
logging.basicConfig(level=logging.ERROR)

from tapestry.config import EngineConfig
from tapestry.gateway import Engine

MUSIC_SCRIPT = [
    "sam",
    "tokyo",
    "mostly the food",
    "flying for sure",
    "i love video games",
    "sounds good",
    "lets talk about music",
    "i listen to rock mostly",
    "yeah definitely",
    "wow i did not know that",
    "yes i play guitar",
    "thats a fun thought",
    "yeah i saw the beatles tribute band once",
    "nice",
    "good to know",
]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--json", type=Path, default=None)
    args = parser.parse_args(argv)

    engine = Engine(EngineConfig(seed=args.seed, today=date(2021, 6, 1)))
    opened = engine.start_session(user_id="demo")
    cid = opened["conversation_id"]
    print(f"[{opened['topic']}/{opened['rg']}] SYSTEM: {opened['reply']}")
    for text in MUSIC_SCRIPT:
        print(f"{'':>14}  USER: {text}")
        reply = engine.post_utterance(cid, text)
        print(f"[{reply['topic']}/{reply['rg']}] SYSTEM: {reply['reply']}")
    engine.end_session(cid, rating=5)

    transcript = engine.transcript(cid)
    music_rgs = {t["rg"] for t in transcript["turns"] if t["topic"] == "music" and t["rg"]}
    print(f"\ngenerators used on the music topic: {sorted(music_rgs)}")
    if args.json:
        args.json.write_text(json.dumps(transcript, indent=2), encoding="utf-8")
        print(f"transcript written to {args.json}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
