import json
import socket
import threading

from hypothesis import given, settings
from hypothesis import strategies as st

from tapestry.ranker import (
    ExternalRankerClient,
    RankerWeights,
    rank,
    score,
    similarity,
)
from tapestry.rg import CandidateResponse, ResponseConditions, ResponsePart
from tapestry.state import Speaker, Turn
from tapestry.textnorm import normalize


def trigram_oracle(a: str, b: str) -> float:
    """Independent implementation: enumerate token trigram sets by hand."""
    ta = normalize(a).split()
    tb = normalize(b).split()
    if " ".join(ta) == " ".join(tb):
        return 1.0
    sa = {tuple(ta[i : i + 3]) for i in range(len(ta) - 2)}
    sb = {tuple(tb[i : i + 3]) for i in range(len(tb) - 2)}
    if not sa or not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


class TestSimilarity:
    def test_identical_strings(self):
        assert similarity("I love dogs", "i love dogs!") == 1.0

    def test_disjoint_vocabulary(self):
        assert similarity("alpha beta gamma delta", "one two three four") == 0.0

    def test_matches_enumeration_oracle(self):
        pairs = [
            ("i love dogs a lot", "i love cats a lot"),
            ("i love dogs a lot", "i love dogs a lot today"),
            ("the quick brown fox jumps", "a quick brown fox jumps high"),
            ("short", "short text"),
        ]
        for a, b in pairs:
            assert similarity(a, b) == trigram_oracle(a, b)

    @given(st.text(max_size=60), st.text(max_size=60))
    @settings(max_examples=150)
    def test_symmetric_and_bounded(self, a, b):
        s = similarity(a, b)
        assert 0.0 <= s <= 1.0
        assert s == similarity(b, a)

    @given(st.text(max_size=60))
    def test_self_similarity_is_one(self, a):
        assert similarity(a, a) == 1.0


def conds(**kw):
    base = dict(topic="music", required_parts=frozenset({ResponsePart.BODY}))
    base.update(kw)
    return ResponseConditions(**base)


def cand(text, topic="music", rg_index=0, cand_index=0, **kw):
    c = CandidateResponse(rg="stub", body=text, topic=topic, **kw)
    c.meta["rg_index"] = rg_index
    c.meta["cand_index"] = cand_index
    return c


WEIGHTS = RankerWeights()


class TestScore:
    def test_identical_to_last_system_turn_kills_novelty(self):
        window = [Turn(0, Speaker.SYSTEM, "I have got a fun fact about drums for you today.")]
        same = cand("I have got a fun fact about drums for you today.")
        fresh = cand("Here is a completely different remark about guitars instead.")
        assert score(same, window, conds()) < score(fresh, window, conds())

    def test_addressing_question_scores_higher(self):
        window = [Turn(0, Speaker.USER, "what instruments do you like")]
        conditions = conds(must_address_question=True)
        answered = cand("I adore the cello more than anything.", )
        answered.meta["addresses_question"] = True
        ignored = cand("I adore the cello more than anything.")
        ignored.meta["addresses_question"] = False
        assert score(answered, window, conditions) > score(ignored, window, conditions)

    def test_matches_hand_computed_weighted_sum(self):
        """Spreadsheet oracle over the documented default weights."""
        window = [
            Turn(0, Speaker.USER, "tell me about the beatles", entities=["Q1299"]),
            Turn(1, Speaker.SYSTEM, "The Beatles changed music forever, if you ask me."),
        ]
        conditions = conds()
        candidate = cand("They started in a small club and took over the world.",
                         entities_used=["Q1299"])
        # Hand computation: condition fit 1 (no question required), topic
        # continuity 1 (candidate topic == conditions topic), entity overlap
        # 1/1, novelty 1 - sim(text, system turn), length fit 1 (10 tokens
        # inside the 6..60 band).
        novelty = 1.0 - trigram_oracle(
            "They started in a small club and took over the world.",
            "The Beatles changed music forever, if you ask me.",
        )
        expected = 2.0 * 1 + 1.0 * 1 + 1.0 * 1 + 1.5 * novelty + 0.5 * 1
        assert abs(score(candidate, window, conditions, WEIGHTS) - expected) < 1e-12


class TestRank:
    def test_single_candidate_first(self):
        pool = [cand("Only one option in this pool today.")]
        ranked = rank(pool, [], conds())
        assert ranked.best() is pool[0]

    def test_tie_broken_by_registry_order(self):
        a = cand("Same exact body text here.", rg_index=1, cand_index=0)
        b = cand("Same exact body text here.", rg_index=0, cand_index=0)
        ranked = rank([a, b], [], conds())
        assert ranked.best() is b

    def test_matches_brute_force_oracle(self):
        window = [Turn(0, Speaker.SYSTEM, "Let me share a fact about pianos with you.")]
        conditions = conds()
        pool = [
            cand("Let me share a fact about pianos with you.", rg_index=0, cand_index=0),
            cand("Guitars have six strings, usually, but not always.", rg_index=0, cand_index=1),
            cand("Drums are the heartbeat of a band.", rg_index=1, cand_index=0),
            cand("A short one.", rg_index=1, cand_index=1),
            cand("Off topic entirely.", topic="movies", rg_index=2, cand_index=0),
        ]
        expected = sorted(
            pool,
            key=lambda c: (
                -score(c, window, conditions, WEIGHTS),
                c.meta["rg_index"],
                c.meta["cand_index"],
            ),
        )
        ranked = rank(pool, window, conditions, WEIGHTS)
        assert [c.rendered_text for c, _ in ranked.entries] == [c.rendered_text for c in expected]

    def test_rank_is_permutation(self):
        pool = [cand(f"Candidate number {i} says something unique here.", cand_index=i) for i in range(6)]
        ranked = rank(pool, [], conds())
        assert sorted(id(c) for c, _ in ranked.entries) == sorted(id(c) for c in pool)

    def test_scores_independent_of_input_order(self):
        window = [Turn(0, Speaker.SYSTEM, "An earlier remark about songs.")]
        pool = [cand(f"Candidate number {i} with its own words entirely.", cand_index=i) for i in range(5)]
        forward = rank(pool, window, conds())
        backward = rank(list(reversed(pool)), window, conds())
        assert [(c.rendered_text, s) for c, s in forward.entries] == [
            (c.rendered_text, s) for c, s in backward.entries
        ]


class TestExternalRanker:
    def test_socket_protocol_round_trip(self):
        """A drop-in external scorer: longest response wins."""

        def serve(sock):
            conn, _ = sock.accept()
            buf = b""
            while not buf.endswith(b"\n"):
                buf += conn.recv(65536)
            request = json.loads(buf.decode())
            scores = [float(len(c["text"])) for c in request["candidates"]]
            conn.sendall((json.dumps({"scores": scores}) + "\n").encode())
            conn.close()

        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        sock.listen(1)
        port = sock.getsockname()[1]
        thread = threading.Thread(target=serve, args=(sock,), daemon=True)
        thread.start()

        pool = [
            cand("Tiny.", cand_index=0),
            cand("A considerably longer candidate that should win the round.", cand_index=1),
        ]
        client = ExternalRankerClient("127.0.0.1", port)
        ranked = client.rank_external(pool, [], conds())
        assert ranked.best() is pool[1]
        thread.join(timeout=2)
        sock.close()
