"""Offline conversation analytics: filtering, summary statistics, per-topic
rating distributions, the utterance-weighted topic score, and the
personalization A/B report.

Input is the engine's append-only event log (``events.jsonl``) plus the
ratings file (``ratings.jsonl``); output is a JSON report and plain-text
tables on stdout.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from scipy import stats as scipy_stats

from .errors import (
    DegenerateDistribution,
    MissingMode,
    NoRatedConversations,
    ParseError,
)

AB_MIN_TURNS = 6
RATING_VALUES = (1, 2, 3, 4, 5)


@dataclass
class RatedConversation:
    id: str
    rating: int | None
    turns: list[tuple[str | None, str]]  # (topic, speaker)
    mode: str | None = None
    duration_minutes: float | None = None
    started_at: float | None = None  # epoch seconds

    def turn_count(self) -> int:
        return len(self.turns)

    def system_utterances_by_topic(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for topic, speaker in self.turns:
            if speaker == "system" and topic is not None:
                counts[topic] = counts.get(topic, 0) + 1
        return counts

    def topics_present(self) -> set[str]:
        return {t for t, s in self.turns if t is not None and s == "system"}


def load_conversations(events_path: Path, ratings_path: Path | None = None) -> list[RatedConversation]:
    """Rebuild per-conversation records from the event stream; the ratings
    file wins over ratings recorded in session_end events."""
    convs: dict[str, RatedConversation] = {}
    order: list[str] = []
    for record in _read_jsonl(events_path):
        cid = record.get("conversation_id")
        if cid is None:
            continue
        if cid not in convs:
            convs[cid] = RatedConversation(id=cid, rating=None, turns=[])
            order.append(cid)
        conv = convs[cid]
        kind = record.get("type")
        if kind == "session_start":
            conv.mode = record.get("mode")
            conv.started_at = record.get("ts")
        elif kind == "turn":
            conv.turns.append((record.get("topic"), record.get("speaker")))
        elif kind == "session_end":
            if record.get("rating") is not None:
                conv.rating = int(record["rating"])
            if record.get("duration_minutes") is not None:
                conv.duration_minutes = float(record["duration_minutes"])
    if ratings_path is not None and ratings_path.exists():
        for record in _read_jsonl(ratings_path):
            cid = record.get("conversation_id")
            if cid in convs and record.get("rating") is not None:
                convs[cid].rating = int(record["rating"])
    return [convs[cid] for cid in order]


def _read_jsonl(path: Path):
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path.name}:{line_no}: bad event record") from exc


def filter_short(convs: list[RatedConversation], min_turns: int) -> list[RatedConversation]:
    """Drop conversations shorter than min_turns total turns. Idempotent and
    monotone in min_turns."""
    return [c for c in convs if c.turn_count() >= min_turns]


def _median_low(values: list[float]) -> float:
    """Lower middle for even counts (documented choice)."""
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def summary_stats(convs: list[RatedConversation]) -> dict:
    rated = [c for c in convs if c.rating is not None]
    if not rated:
        raise NoRatedConversations("no rated conversations in the input")
    ratings = [float(c.rating) for c in rated]
    turn_counts = [float(c.turn_count()) for c in convs]
    durations = [c.duration_minutes for c in convs if c.duration_minutes is not None]
    return {
        "conversations": len(convs),
        "rated": len(rated),
        "mean_rating": sum(ratings) / len(ratings),
        "median_rating": _median_low(ratings),
        "mean_turns": sum(turn_counts) / len(turn_counts),
        "median_turns": _median_low(turn_counts),
        "median_duration_minutes": _median_low(durations) if durations else None,
    }


def topic_zscores(convs: list[RatedConversation]) -> dict[str, float]:
    """Per-topic sum of rating x system utterances over rated conversations,
    standardized across topics (population std)."""
    sums: dict[str, float] = {}
    for conv in convs:
        if conv.rating is None:
            continue
        for topic, count in conv.system_utterances_by_topic().items():
            sums[topic] = sums.get(topic, 0.0) + conv.rating * count
    if len(sums) < 2:
        raise DegenerateDistribution("need at least two topics with nonzero sums")
    values = list(sums.values())
    mean = sum(values) / len(values)
    variance = sum((v - mean) ** 2 for v in values) / len(values)
    if variance == 0.0:
        raise DegenerateDistribution("all topic sums are equal")
    std = math.sqrt(variance)
    return {topic: (total - mean) / std for topic, total in sums.items()}


def topic_presence_distribution(convs: list[RatedConversation]) -> dict[str, dict[int, float]]:
    """For each topic, the proportion of rated conversations containing it
    at each rating value; proportions per topic sum to 1."""
    counts: dict[str, dict[int, int]] = {}
    for conv in convs:
        if conv.rating is None:
            continue
        for topic in conv.topics_present():
            by_rating = counts.setdefault(topic, {r: 0 for r in RATING_VALUES})
            by_rating[conv.rating] += 1
    out: dict[str, dict[int, float]] = {}
    for topic, by_rating in counts.items():
        total = sum(by_rating.values())
        out[topic] = {r: by_rating[r] / total for r in RATING_VALUES}
    return out


def ab_report(convs: list[RatedConversation], min_turns: int = AB_MIN_TURNS) -> dict:
    """Personalized vs heuristic arms over conversations long enough for
    topic promotion to matter; Welch's t-test on ratings and lengths."""
    eligible = filter_short(convs, min_turns)
    arms: dict[str, list[RatedConversation]] = {"personalized": [], "heuristic": []}
    for conv in eligible:
        if conv.mode in arms and conv.rating is not None:
            arms[conv.mode].append(conv)
    for mode, members in arms.items():
        if not members:
            raise MissingMode(f"no rated conversations in the {mode!r} arm")

    def column(members: list[RatedConversation]) -> dict:
        ratings = [float(c.rating) for c in members]
        lengths = [float(c.turn_count()) for c in members]
        return {
            "convs": len(members),
            "mean_rating": sum(ratings) / len(ratings),
            "mean_length": sum(lengths) / len(lengths),
        }

    personalized = arms["personalized"]
    heuristic = arms["heuristic"]
    rating_test = scipy_stats.ttest_ind(
        [float(c.rating) for c in personalized],
        [float(c.rating) for c in heuristic],
        equal_var=False,
    )
    length_test = scipy_stats.ttest_ind(
        [float(c.turn_count()) for c in personalized],
        [float(c.turn_count()) for c in heuristic],
        equal_var=False,
    )
    return {
        "min_turns": min_turns,
        "personalized": column(personalized),
        "heuristic": column(heuristic),
        "rating_p_value": float(rating_test.pvalue),
        "length_p_value": float(length_test.pvalue),
    }


# -- report rendering ---------------------------------------------------------


def render_report(
    convs: list[RatedConversation], min_turns: int = 3, include_ab: bool = False
) -> dict:
    filtered = filter_short(convs, min_turns)
    report: dict = {"min_turns": min_turns, "total_conversations": len(convs)}
    try:
        report["summary"] = summary_stats(filtered)
    except NoRatedConversations:
        report["summary"] = None
    try:
        report["topic_zscores"] = dict(
            sorted(topic_zscores(filtered).items(), key=lambda kv: -kv[1])
        )
    except DegenerateDistribution:
        report["topic_zscores"] = None
    report["topic_presence"] = topic_presence_distribution(filtered)
    if include_ab:
        try:
            report["ab"] = ab_report(convs)
        except MissingMode as exc:
            report["ab"] = {"error": str(exc)}
    return report


def _print_tables(report: dict, out=sys.stdout) -> None:
    summary = report.get("summary")
    print("== Summary ==", file=out)
    if summary:
        print(
            f"conversations={summary['conversations']} rated={summary['rated']} "
            f"mean_rating={summary['mean_rating']:.2f} median_rating={summary['median_rating']:.1f} "
            f"mean_turns={summary['mean_turns']:.1f} median_turns={summary['median_turns']:.0f}",
            file=out,
        )
    else:
        print("(no rated conversations)", file=out)
    zscores = report.get("topic_zscores")
    if zscores:
        print("\n== Topic scores (standardized) ==", file=out)
        for topic, z in zscores.items():
            bar = "#" * int(abs(z) * 4)
            sign = "+" if z >= 0 else "-"
            print(f"{topic:>14}  {z:+.2f}  {sign}{bar}", file=out)
    ab = report.get("ab")
    if ab and "error" not in ab:
        print("\n== Personalized vs heuristic ==", file=out)
        for arm in ("personalized", "heuristic"):
            col = ab[arm]
            print(
                f"{arm:>13}: n={col['convs']} rating={col['mean_rating']:.2f} "
                f"length={col['mean_length']:.2f}",
                file=out,
            )
        print(
            f"      p-values: rating={ab['rating_p_value']:.4f} length={ab['length_p_value']:.4f}",
            file=out,
        )
    elif ab:
        print(f"\n== A/B == {ab['error']}", file=out)


def filter_date_range(
    convs: list[RatedConversation],
    since: float | None = None,
    until: float | None = None,
) -> list[RatedConversation]:
    """Keep conversations whose session started inside [since, until); ones
    without a start timestamp are kept only when no bound is given."""
    if since is None and until is None:
        return convs
    out = []
    for conv in convs:
        if conv.started_at is None:
            continue
        if since is not None and conv.started_at < since:
            continue
        if until is not None and conv.started_at >= until:
            continue
        out.append(conv)
    return out


def main(argv: list[str] | None = None) -> int:
    import datetime

    parser = argparse.ArgumentParser(
        prog="tapestry-report", description="Conversation analytics over engine event logs."
    )
    parser.add_argument("--events", type=Path, required=True, help="events.jsonl path")
    parser.add_argument("--ratings", type=Path, default=None, help="ratings.jsonl path")
    parser.add_argument("--min-turns", type=int, default=3)
    parser.add_argument("--since", default=None, help="only sessions started on/after YYYY-MM-DD")
    parser.add_argument("--until", default=None, help="only sessions started before YYYY-MM-DD")
    parser.add_argument("--ab", action="store_true", help="include the A/B mode split")
    parser.add_argument("--json", type=Path, default=None, help="also write the JSON report here")
    args = parser.parse_args(argv)

    def to_epoch(value: str | None) -> float | None:
        if value is None:
            return None
        return datetime.datetime.fromisoformat(value).timestamp()

    convs = load_conversations(args.events, args.ratings)
    convs = filter_date_range(convs, to_epoch(args.since), to_epoch(args.until))
    report = render_report(convs, min_turns=args.min_turns, include_ab=args.ab)
    _print_tables(report)
    if args.json:
        args.json.write_text(json.dumps(report, indent=2), encoding="utf-8")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
