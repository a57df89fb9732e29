"""Text normalization shared by response hashing, the novelty filter, and the ranker.

All modules that compare system output against history must agree on one
normalization, otherwise punctuation variants slip past the novelty rule.
"""

import hashlib
import re

_PUNCT = re.compile(r"[^\w\s]")
_WS = re.compile(r"\s+")


def normalize(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return _WS.sub(" ", _PUNCT.sub("", text.lower())).strip()


def norm_tokens(text: str) -> list[str]:
    norm = normalize(text)
    return norm.split() if norm else []


def response_hash(text: str) -> str:
    """Stable short hash of the normalized text."""
    return hashlib.sha256(normalize(text).encode("utf-8")).hexdigest()[:16]
