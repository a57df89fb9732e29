"""Rule-based NLU pipeline: segmentation, dialogue-act tagging, entity
linking, topic classification, and sentiment.

All behavior is driven by line-oriented rule tables loaded at startup (see
``assets/nlu/``), so annotation is deterministic for fixed tables and a
fixed knowledge-graph snapshot.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

from .errors import EmptyUtterance, ParseError
from .textnorm import normalize

if TYPE_CHECKING:
    from .kg import KnowledgeGraph


class DaTag(str, Enum):
    YES_ANSWER = "YesAnswer"
    NO_ANSWER = "NoAnswer"
    OPINION = "Opinion"
    STATEMENT = "Statement"
    OPEN_QUESTION = "OpenQuestion"
    YES_NO_QUESTION = "YesNoQuestion"
    COMMAND = "Command"
    REQUEST_TOPIC_SWITCH = "RequestTopicSwitch"
    ACKNOWLEDGEMENT = "Acknowledgement"
    REQUEST_REPEAT = "RequestRepeat"
    OTHER = "Other"


QUESTION_TAGS = {DaTag.OPEN_QUESTION, DaTag.YES_NO_QUESTION}


class Sentiment(str, Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"
    NEUTRAL = "Neutral"


@dataclass(frozen=True)
class Segment:
    text: str
    span: tuple[int, int]


@dataclass(frozen=True)
class DialogueAct:
    tag: DaTag
    confidence: float = 1.0


@dataclass(frozen=True)
class EntityMention:
    surface: str
    entity_id: str
    entity_type: str
    span: tuple[int, int]


@dataclass
class NluAnnotation:
    raw: str
    segments: list[Segment]
    acts: list[DialogueAct]
    entities: list[EntityMention]
    topic: str | None
    sentiment: Sentiment
    keywords: list[str] = field(default_factory=list)

    def act_tags(self) -> set[DaTag]:
        return {act.tag for act in self.acts}

    def has_question(self) -> bool:
        return bool(self.act_tags() & QUESTION_TAGS)

    def to_dict(self) -> dict:
        return {
            "raw": self.raw,
            "segments": [{"text": s.text, "span": list(s.span)} for s in self.segments],
            "acts": [{"tag": a.tag.value, "confidence": a.confidence} for a in self.acts],
            "entities": [
                {
                    "surface": e.surface,
                    "entity_id": e.entity_id,
                    "entity_type": e.entity_type,
                    "span": list(e.span),
                }
                for e in self.entities
            ],
            "topic": self.topic,
            "sentiment": self.sentiment.value,
            "keywords": list(self.keywords),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NluAnnotation":
        return cls(
            raw=doc["raw"],
            segments=[Segment(s["text"], tuple(s["span"])) for s in doc["segments"]],
            acts=[DialogueAct(DaTag(a["tag"]), a["confidence"]) for a in doc["acts"]],
            entities=[
                EntityMention(e["surface"], e["entity_id"], e["entity_type"], tuple(e["span"]))
                for e in doc["entities"]
            ],
            topic=doc["topic"],
            sentiment=Sentiment(doc["sentiment"]),
            keywords=list(doc.get("keywords", [])),
        )


@dataclass(frozen=True)
class DaRule:
    tag: DaTag
    kind: str  # exact | prefix | phrase | regex
    pattern: str


@dataclass(frozen=True)
class TopicRule:
    kind: str  # entity_type | keyword
    pattern: str
    topic: str


@dataclass
class RuleTables:
    conjunctions: list[list[str]]  # tokenized markers, longest first
    interjections: set[str]
    da_rules: list[DaRule]
    polarity: dict[str, int]  # word -> +1 / -1
    negators: set[str]
    topic_rules: list[TopicRule]

    @classmethod
    def load(cls, rules_dir: Path) -> "RuleTables":
        conjunctions = [
            marker.split()
            for marker in _read_lines(rules_dir / "conjunctions.txt")
        ]
        conjunctions.sort(key=len, reverse=True)
        interjections = set(_read_lines(rules_dir / "interjections.txt"))

        da_rules = []
        for line in _read_lines(rules_dir / "da_patterns.txt"):
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"bad dialogue act rule: {line!r}")
            tag, kind, pattern = parts
            if kind not in ("exact", "prefix", "phrase", "regex"):
                raise ParseError(f"unknown rule kind {kind!r} in {line!r}")
            da_rules.append(DaRule(DaTag(tag), kind, pattern))

        polarity: dict[str, int] = {}
        negators: set[str] = set()
        for line in _read_lines(rules_dir / "polarity.txt"):
            word, _, mark = line.partition("\t")
            if mark == "+":
                polarity[word] = 1
            elif mark == "-":
                polarity[word] = -1
            elif mark == "!":
                negators.add(word)
            else:
                raise ParseError(f"bad polarity entry: {line!r}")

        topic_rules = []
        for line in _read_lines(rules_dir / "topic_rules.txt"):
            parts = line.split("\t")
            if len(parts) != 3 or parts[0] not in ("entity_type", "keyword"):
                raise ParseError(f"bad topic rule: {line!r}")
            topic_rules.append(TopicRule(parts[0], parts[1], parts[2]))

        return cls(conjunctions, interjections, da_rules, polarity, negators, topic_rules)


def _read_lines(path: Path) -> list[str]:
    lines = []
    for raw_line in path.read_text(encoding="utf-8").splitlines():
        line = raw_line.rstrip()
        if line and not line.startswith("#"):
            lines.append(line)
    return lines


_SENTENCE_BREAK = re.compile(r"[.?!;]+")
_TOKEN = re.compile(r"\S+")


def segment_utterance(raw: str, tables: RuleTables) -> list[Segment]:
    """Split an utterance into clause segments on sentence breaks, leading
    interjection runs, and conjunction markers from the rule table."""
    if not raw.strip():
        raise EmptyUtterance("blank utterance")

    segments: list[Segment] = []
    cursor = 0
    pieces = []
    for match in _SENTENCE_BREAK.finditer(raw):
        pieces.append((cursor, match.start()))
        cursor = match.end()
    pieces.append((cursor, len(raw)))

    for start, end in pieces:
        piece = raw[start:end]
        token_spans = [(m.start() + start, m.end() + start) for m in _TOKEN.finditer(piece)]
        if not token_spans:
            continue
        norm_toks = [normalize(raw[s:e]) for s, e in token_spans]
        splits = _split_points(norm_toks, tables)
        bounds = [0, *splits, len(token_spans)]
        for i in range(len(bounds) - 1):
            lo, hi = bounds[i], bounds[i + 1]
            span = (token_spans[lo][0], token_spans[hi - 1][1])
            text = _trim_span(raw, span)
            if text is not None:
                segments.append(Segment(raw[text[0] : text[1]], text))

    if not segments:
        raise EmptyUtterance("no segmentable content")
    return segments


def _split_points(norm_toks: list[str], tables: RuleTables) -> list[int]:
    points: list[int] = []
    # Maximal leading interjection run, when real content follows it.
    run = 0
    while run < len(norm_toks) and norm_toks[run] in tables.interjections:
        run += 1
    if 0 < run < len(norm_toks):
        points.append(run)
    seg_start = run if 0 < run < len(norm_toks) else 0

    i = seg_start
    while i < len(norm_toks):
        if i > seg_start:
            for marker in tables.conjunctions:
                k = len(marker)
                if norm_toks[i : i + k] == marker and i + k < len(norm_toks):
                    points.append(i)
                    seg_start = i
                    i += k
                    break
            else:
                i += 1
        else:
            i += 1
    return points


_EDGE_JUNK = re.compile(r"[\s.,!?;:]")


def _trim_span(raw: str, span: tuple[int, int]) -> tuple[int, int] | None:
    lo, hi = span
    while lo < hi and _EDGE_JUNK.match(raw[lo]):
        lo += 1
    while hi > lo and _EDGE_JUNK.match(raw[hi - 1]):
        hi -= 1
    return (lo, hi) if lo < hi else None


def tag_dialogue_act(
    segment: Segment, tables: RuleTables, context: list | None = None
) -> DialogueAct:
    """Deterministic dialogue act from the pattern table; rule order is the
    priority order. Unmatched segments fall back to Statement or Other."""
    norm = normalize(segment.text)
    toks = norm.split()
    for rule in tables.da_rules:
        if _rule_matches(rule, norm, toks):
            return DialogueAct(rule.tag, 1.0)
    if len(toks) >= 2:
        return DialogueAct(DaTag.STATEMENT, 0.6)
    return DialogueAct(DaTag.OTHER, 0.3)


def _rule_matches(rule: DaRule, norm: str, toks: list[str]) -> bool:
    if rule.kind == "exact":
        return norm == rule.pattern
    if rule.kind == "prefix":
        pat = rule.pattern.split()
        return toks[: len(pat)] == pat
    if rule.kind == "phrase":
        pat = rule.pattern.split()
        return any(toks[i : i + len(pat)] == pat for i in range(len(toks) - len(pat) + 1))
    return re.search(rule.pattern, norm) is not None


def link_entities(
    segment: Segment, kg: "KnowledgeGraph", active_anchor: str | None = None
) -> list[EntityMention]:
    """Longest-match lexicon lookup over KG entity aliases. Context-scoped
    aliases participate only while their anchor entity is active."""
    token_spans = [
        (m.start() + segment.span[0], m.end() + segment.span[0])
        for m in _TOKEN.finditer(segment.text)
    ]
    norm_toks = [normalize(segment.text[s - segment.span[0] : e - segment.span[0]]) for s, e in token_spans]

    mentions: list[EntityMention] = []
    i = 0
    max_len = kg.max_alias_tokens()
    while i < len(norm_toks):
        matched = None
        for n in range(min(max_len, len(norm_toks) - i), 0, -1):
            phrase = " ".join(norm_toks[i : i + n])
            entity_id = kg.resolve_alias(phrase, active_anchor)
            if entity_id is not None:
                matched = (n, entity_id)
                break
        if matched:
            n, entity_id = matched
            node = kg.entity(entity_id)
            span = (token_spans[i][0], token_spans[i + n - 1][1])
            surface = segment.text[span[0] - segment.span[0] : span[1] - segment.span[0]]
            mentions.append(EntityMention(surface, entity_id, node.type, span))
            i += n
        else:
            i += 1
    return mentions


def classify_topic(
    entities: list[EntityMention],
    raw: str,
    tables: RuleTables,
    inventory: set[str],
) -> str | None:
    """Topic from entity-type rules first, keyword rules second; None when
    nothing fires."""
    for rule in tables.topic_rules:
        if rule.kind != "entity_type" or rule.topic not in inventory:
            continue
        if any(e.entity_type == rule.pattern for e in entities):
            return rule.topic
    norm_toks = normalize(raw).split()
    for rule in tables.topic_rules:
        if rule.kind != "keyword" or rule.topic not in inventory:
            continue
        pat = rule.pattern.split()
        if any(norm_toks[i : i + len(pat)] == pat for i in range(len(norm_toks) - len(pat) + 1)):
            return rule.topic
    return None


def score_sentiment(raw: str, tables: RuleTables) -> Sentiment:
    """Coarse polarity over the lexicon, with negation flip within 3 tokens."""
    toks = normalize(raw).split()
    score = 0
    for i, tok in enumerate(toks):
        polarity = tables.polarity.get(tok)
        if polarity is None:
            continue
        negated = any(toks[j] in tables.negators for j in range(max(0, i - 3), i))
        score += -polarity if negated else polarity
    if score > 0:
        return Sentiment.POSITIVE
    if score < 0:
        return Sentiment.NEGATIVE
    return Sentiment.NEUTRAL


_STOPWORDS = {
    "the", "a", "an", "i", "you", "we", "they", "he", "she", "it", "is", "are",
    "was", "were", "am", "be", "been", "do", "does", "did", "have", "has", "had",
    "my", "your", "our", "their", "his", "her", "its", "me", "him", "them", "us",
    "to", "of", "in", "on", "at", "for", "with", "about", "and", "or", "but",
    "that", "this", "these", "those", "there", "here", "what", "who", "when",
    "where", "why", "how", "which", "really", "very", "so", "its", "im", "thats",
    "dont", "cant", "would", "could", "should", "can", "will", "just", "lets",
    "like", "love", "liked", "loved", "think", "guess", "maybe", "pretty",
    "much", "lot", "lots", "kind", "sort", "stuff", "thing", "things", "yeah",
    "yes", "no", "okay", "ok", "well", "say", "id", "ive", "some", "one", "any",
    "want", "wanted", "get", "go", "going", "mostly", "because", "cause",
}


class NluPipeline:
    """Composition of the rule-based NLU operations over one rule-table set
    and one KG snapshot."""

    def __init__(self, tables: RuleTables, kg: "KnowledgeGraph", inventory: set[str]):
        self.tables = tables
        self.kg = kg
        self.inventory = inventory

    def annotate(self, raw: str, active_anchor: str | None = None) -> NluAnnotation:
        segments = segment_utterance(raw, self.tables)
        acts = [tag_dialogue_act(seg, self.tables) for seg in segments]
        entities: list[EntityMention] = []
        for seg in segments:
            entities.extend(link_entities(seg, self.kg, active_anchor))
        topic = classify_topic(entities, raw, self.tables, self.inventory)
        sentiment = score_sentiment(raw, self.tables)
        keywords = [t for t in normalize(raw).split() if t not in _STOPWORDS]
        return NluAnnotation(
            raw=raw,
            segments=segments,
            acts=acts,
            entities=entities,
            topic=topic,
            sentiment=sentiment,
            keywords=keywords,
        )
