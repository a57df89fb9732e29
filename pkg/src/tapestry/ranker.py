"""Response-pool ranking behind a pluggable scoring contract.

The default scorer is a deterministic weighted feature sum; a learned model
can be attached later through ``ExternalRankerClient``, which speaks a
line-delimited JSON protocol over a local socket. The similarity measure
here is also the one the DM's novelty rule uses.
"""

from __future__ import annotations

import json
import socket
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import EmptyPool
from .rg import CandidateResponse, ResponseConditions
from .state import Speaker, Turn
from .textnorm import normalize

CONTEXT_WINDOW = 5


def similarity(a: str, b: str) -> float:
    """Token-trigram Jaccard over normalized text; 1.0 exactly on
    normalized-equal inputs, 0.0 when either side has no trigrams."""
    na, nb = normalize(a), normalize(b)
    if na == nb:
        return 1.0
    ta = _trigrams(na.split())
    tb = _trigrams(nb.split())
    if not ta or not tb:
        return 0.0
    inter = len(ta & tb)
    return inter / (len(ta) + len(tb) - inter)


def _trigrams(tokens: list[str]) -> set[tuple[str, str, str]]:
    return {tuple(tokens[i : i + 3]) for i in range(len(tokens) - 2)}


@dataclass(frozen=True)
class RankerWeights:
    condition_fit: float = 2.0
    topic_continuity: float = 1.0
    entity_overlap: float = 1.0
    novelty: float = 1.5
    length_fit: float = 0.5
    length_band: tuple[int, int] = (6, 60)

    @classmethod
    def from_file(cls, path: Path) -> "RankerWeights":
        doc = json.loads(path.read_text(encoding="utf-8"))
        band = doc.pop("length_band", None)
        weights = cls(**doc) if band is None else cls(length_band=tuple(band), **doc)
        return weights


@dataclass
class RankedPool:
    entries: list[tuple[CandidateResponse, float]]
    context_window: list[Turn] = field(default_factory=list)

    def best(self) -> CandidateResponse:
        return self.entries[0][0]


Scorer = Callable[[CandidateResponse, Sequence[Turn], ResponseConditions], float]


def score(
    candidate: CandidateResponse,
    context_window: Sequence[Turn],
    conditions: ResponseConditions,
    weights: RankerWeights = RankerWeights(),
) -> float:
    """Deterministic heuristic: weighted sum of condition fit, topic
    continuity, entity overlap with the user's last turn, novelty within
    the window, and length band fit."""
    window = list(context_window)[-CONTEXT_WINDOW:]
    last_user = next((t for t in reversed(window) if t.speaker is Speaker.USER), None)

    fit = 1.0
    if conditions.must_address_question:
        addressed = candidate.meta.get("addresses_question")
        if addressed is None:
            addressed = candidate.body is not None
        fit = 1.0 if addressed else 0.0

    continuity = 0.0
    if conditions.topic is not None and candidate.topic == conditions.topic:
        continuity = 1.0
    elif window and candidate.topic is not None and candidate.topic == window[-1].topic:
        continuity = 1.0

    overlap = 0.0
    if last_user is not None and last_user.entities:
        shared = set(candidate.entities_used) & set(last_user.entities)
        overlap = len(shared) / len(set(last_user.entities))

    novelty = 1.0
    system_texts = [t.text for t in window if t.speaker is Speaker.SYSTEM]
    if system_texts:
        novelty = 1.0 - max(similarity(candidate.rendered_text, t) for t in system_texts)

    n_tokens = len(normalize(candidate.rendered_text).split())
    lo, hi = weights.length_band
    if n_tokens < lo:
        length = n_tokens / lo
    elif n_tokens > hi:
        length = max(0.0, 1.0 - (n_tokens - hi) / hi)
    else:
        length = 1.0

    return (
        weights.condition_fit * fit
        + weights.topic_continuity * continuity
        + weights.entity_overlap * overlap
        + weights.novelty * novelty
        + weights.length_fit * length
    )


def rank(
    pool: list[CandidateResponse],
    context_window: Sequence[Turn],
    conditions: ResponseConditions,
    weights: RankerWeights = RankerWeights(),
    scorer: Scorer | None = None,
) -> RankedPool:
    """Stable descending sort by score; ties broken by registry order then
    candidate index. The output is always a permutation of the input."""
    if not pool:
        raise EmptyPool("cannot rank an empty pool")
    window = list(context_window)[-CONTEXT_WINDOW:]
    scoring = scorer or (lambda c, ctx, cond: score(c, ctx, cond, weights))
    scored = [(candidate, float(scoring(candidate, window, conditions))) for candidate in pool]
    scored.sort(
        key=lambda item: (
            -item[1],
            item[0].meta.get("rg_index", 0),
            item[0].meta.get("cand_index", 0),
        )
    )
    return RankedPool(scored, window)


class ExternalRankerClient:
    """Adapter for an out-of-process scorer.

    Protocol: one JSON object per line over a TCP socket.
      request:  {"schema_version": 1, "candidates": [{"rg", "topic", "text"}...],
                 "context": [{"speaker", "text"}...]}
      response: {"scores": [float, ...]}  (parallel to candidates)
    """

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.host = host
        self.port = port
        self.timeout = timeout

    def score_pool(
        self, pool: list[CandidateResponse], context_window: Sequence[Turn]
    ) -> list[float]:
        request = {
            "schema_version": 1,
            "candidates": [
                {"rg": c.rg, "topic": c.topic, "text": c.rendered_text} for c in pool
            ],
            "context": [
                {"speaker": t.speaker.value, "text": t.text}
                for t in list(context_window)[-CONTEXT_WINDOW:]
            ],
        }
        with socket.create_connection((self.host, self.port), timeout=self.timeout) as conn:
            conn.sendall((json.dumps(request) + "\n").encode("utf-8"))
            buf = b""
            while not buf.endswith(b"\n"):
                chunk = conn.recv(65536)
                if not chunk:
                    break
                buf += chunk
        reply = json.loads(buf.decode("utf-8"))
        scores = [float(s) for s in reply["scores"]]
        if len(scores) != len(pool):
            raise ValueError("external ranker returned a mismatched score vector")
        return scores

    def rank_external(
        self,
        pool: list[CandidateResponse],
        context_window: Sequence[Turn],
        conditions: ResponseConditions,
    ) -> RankedPool:
        scores = self.score_pool(pool, context_window)
        by_id = {id(c): s for c, s in zip(pool, scores)}
        return rank(
            pool,
            context_window,
            conditions,
            scorer=lambda c, ctx, cond: by_id[id(c)],
        )
