"""Engine configuration: a single dataclass loadable from a JSON file with
environment-variable overrides (``TAPESTRY_*``)."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path

from .dm import DEFAULT_APOLOGY, DEFAULT_CLOSING
from .ranker import RankerWeights

PACKAGED_ASSETS = Path(__file__).parent / "assets"


@dataclass(frozen=True)
class EngineConfig:
    assets_dir: Path = PACKAGED_ASSETS
    store_dir: Path | None = None  # None keeps everything in memory
    seed: int = 7
    novelty_threshold: float = 0.5
    ab_personalized_ratio: float = 0.25
    mode: str = "auto"  # auto | personalized | heuristic
    today: date | None = None  # None = wall clock
    max_entity_repeat: int = 3
    chime_max_turns: int = 2
    idle_timeout_minutes: float | None = None
    apology_line: str = DEFAULT_APOLOGY
    closing_line: str = DEFAULT_CLOSING
    ranker_weights: RankerWeights = field(default_factory=RankerWeights)

    @classmethod
    def from_file(cls, path: Path | str) -> "EngineConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "EngineConfig":
        weights = doc.get("ranker_weights")
        if isinstance(weights, str):  # path to a weights file
            return_weights = RankerWeights.from_file(Path(weights))
            doc = dict(doc)
            doc["ranker_weights"] = None
            base = cls.from_dict(doc)
            return replace(base, ranker_weights=return_weights)
        band = None
        if weights and "length_band" in weights:
            weights = dict(weights)
            band = tuple(weights.pop("length_band"))
        return cls(
            assets_dir=Path(doc["assets_dir"]) if doc.get("assets_dir") else PACKAGED_ASSETS,
            store_dir=Path(doc["store_dir"]) if doc.get("store_dir") else None,
            seed=int(doc.get("seed", 7)),
            novelty_threshold=float(doc.get("novelty_threshold", 0.5)),
            ab_personalized_ratio=float(doc.get("ab_personalized_ratio", 0.25)),
            mode=doc.get("mode", "auto"),
            today=date.fromisoformat(doc["today"]) if doc.get("today") else None,
            max_entity_repeat=int(doc.get("max_entity_repeat", 3)),
            chime_max_turns=int(doc.get("chime_max_turns", 2)),
            idle_timeout_minutes=(
                float(doc["idle_timeout_minutes"]) if doc.get("idle_timeout_minutes") else None
            ),
            apology_line=doc.get("apology_line", DEFAULT_APOLOGY),
            closing_line=doc.get("closing_line", DEFAULT_CLOSING),
            ranker_weights=(
                RankerWeights(**weights) if band is None else RankerWeights(length_band=band, **weights)
            )
            if weights
            else RankerWeights(),
        )

    def with_env_overrides(self, env: dict[str, str] | None = None) -> "EngineConfig":
        env = dict(os.environ if env is None else env)
        updates: dict = {}
        if env.get("TAPESTRY_ASSETS_DIR"):
            updates["assets_dir"] = Path(env["TAPESTRY_ASSETS_DIR"])
        if env.get("TAPESTRY_STORE_DIR"):
            updates["store_dir"] = Path(env["TAPESTRY_STORE_DIR"])
        if env.get("TAPESTRY_SEED"):
            updates["seed"] = int(env["TAPESTRY_SEED"])
        if env.get("TAPESTRY_MODE"):
            updates["mode"] = env["TAPESTRY_MODE"]
        if env.get("TAPESTRY_TODAY"):
            updates["today"] = date.fromisoformat(env["TAPESTRY_TODAY"])
        if env.get("TAPESTRY_NOVELTY_THRESHOLD"):
            updates["novelty_threshold"] = float(env["TAPESTRY_NOVELTY_THRESHOLD"])
        if env.get("TAPESTRY_AB_RATIO"):
            updates["ab_personalized_ratio"] = float(env["TAPESTRY_AB_RATIO"])
        return replace(self, **updates) if updates else self
