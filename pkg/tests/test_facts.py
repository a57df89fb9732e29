import pytest

from tapestry.errors import DuplicateId, UnknownTopic
from tapestry.facts import FactDatabase, FactRg, FunFact, load_fact_db
from tapestry.rg import ResponseConditions, ResponsePart
from tapestry.state import ConversationState, Speaker, Turn

EXPECTED_COUNTS = {
    "animals": 90,
    "comic_books": 26,
    "harry_potter": 21,
    "movies": 54,
    "music": 31,
    "nature": 15,
    "video_games": 20,
}


class TestLoadDb:
    def test_shipped_counts(self, fact_db):
        assert fact_db.counts() == EXPECTED_COUNTS

    def test_empty_database_is_valid(self, tmp_path):
        db = load_fact_db(tmp_path)
        assert db.counts() == {}

    def test_duplicate_id_rejected(self):
        fact = FunFact("x-1", "animals", None, "Hey.", "Something true.")
        with pytest.raises(DuplicateId):
            FactDatabase([fact, fact])


class TestRetrieve:
    def test_entity_key_match_preferred(self, fact_db):
        fact = fact_db.retrieve("animals", "koala", set(), seed=1)
        assert fact.entity_key == "koala"
        assert "fingerprints of a koala" in fact.fact_text

    def test_all_used_returns_none(self, fact_db):
        used = {f.id for f in fact_db.by_topic["animals"]}
        assert fact_db.retrieve("animals", "koala", used, seed=1) is None

    def test_deterministic_for_seed(self, fact_db):
        a = fact_db.retrieve("movies", None, set(), seed="s")
        b = fact_db.retrieve("movies", None, set(), seed="s")
        assert a.id == b.id

    def test_unknown_topic_raises(self, fact_db):
        with pytest.raises(UnknownTopic):
            fact_db.retrieve("knitting", None, set(), seed=1)

    def test_never_returns_used(self, fact_db):
        used = set()
        for _ in range(len(fact_db.by_topic["nature"])):
            fact = fact_db.retrieve("nature", None, used, seed=9)
            assert fact.id not in used
            used.add(fact.id)
        assert fact_db.retrieve("nature", None, used, seed=9) is None

    def test_entity_match_honored_whenever_available(self, fact_db):
        koala_ids = {f.id for f in fact_db.by_topic["animals"] if f.entity_key == "koala"}
        used = set()
        fact = fact_db.retrieve("animals", "koala", used, seed=3)
        assert fact.id in koala_ids
        used |= koala_ids
        fallback = fact_db.retrieve("animals", "koala", used, seed=3)
        assert fallback is not None and fallback.id not in koala_ids


class TestFactRg:
    def conditions(self, topic="animals"):
        return ResponseConditions(topic=topic, required_parts=frozenset({ResponsePart.BODY}))

    def state_with_user_turn(self, nlu, text="tell me about koalas"):
        state = ConversationState("c", seed="f:1")
        ann = nlu.annotate(text)
        state.append_turn(Turn(0, Speaker.USER, text, annotation=ann))
        return state

    def test_rendered_is_lead_in_then_fact(self, fact_db, nlu):
        rg = FactRg(fact_db)
        state = self.state_with_user_turn(nlu)
        cands = rg.generate(state, self.conditions())
        assert cands
        top = cands[0]
        assert top.meta["entity_key"] == "koala"
        assert top.rendered_text == f"{top.opener} {top.body}"
        assert top.rendered_text.startswith(top.opener)

    def test_state_patch_marks_used(self, fact_db, nlu):
        rg = FactRg(fact_db)
        state = self.state_with_user_turn(nlu)
        cand = rg.generate(state, self.conditions())[0]
        assert cand.state_patch == {"rg_state": {"facts": {"used_add": [cand.meta["fact_id"]]}}}

    def test_can_respond_false_when_exhausted(self, fact_db, nlu):
        rg = FactRg(fact_db)
        state = self.state_with_user_turn(nlu)
        state.rg_state["facts"] = {"used": [f.id for f in fact_db.by_topic["animals"]]}
        assert not rg.can_respond(state, self.conditions())

    def test_no_fact_repeats_within_conversation(self, fact_db, nlu):
        rg = FactRg(fact_db)
        state = self.state_with_user_turn(nlu, "i love nature")
        seen = []
        for _ in range(EXPECTED_COUNTS["nature"] + 3):
            cands = rg.generate(state, self.conditions("nature"))
            if not cands:
                break
            fact_id = cands[0].meta["fact_id"]
            seen.append(fact_id)
            used = state.rg_state.setdefault("facts", {}).setdefault("used", [])
            used.append(fact_id)
        assert len(seen) == EXPECTED_COUNTS["nature"]
        assert len(set(seen)) == len(seen)
