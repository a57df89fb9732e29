from hypothesis import given
from hypothesis import strategies as st

from tapestry.textnorm import normalize, norm_tokens, response_hash


def test_normalize_strips_punct_and_case():
    assert normalize("Hi There!") == "hi there"
    assert normalize("don't   stop, please.") == "dont stop please"


def test_hash_invariant_to_punctuation_variation():
    assert response_hash("Hello, world!") == response_hash("hello world")
    assert response_hash("Hello world") != response_hash("goodbye world")


def test_tokens_empty_on_blank():
    assert norm_tokens("  ...  ") == []


@given(st.text(max_size=200))
def test_normalize_idempotent(text):
    assert normalize(normalize(text)) == normalize(text)


@given(st.text(max_size=200))
def test_normalized_text_has_no_double_spaces(text):
    norm = normalize(text)
    assert "  " not in norm
    assert norm == norm.strip()
