"""Shared text utilities: tokenization, matching normalization, sentences."""

from __future__ import annotations

import re
import string

_WS_RE = re.compile(r"\s+")
_SENTENCE_END = ".!?"

# Small closed-class list used by open-answer token recall; question/answer
# text in this domain is short declarative English, so a compact list works.
STOPWORDS = frozenset(
    """
    a an the and or but if then than so of to in on at by for with from as
    is are was were be been being am do does did has have had can could
    will would shall should may might must it its this that these those
    there here he she they we you i his her their our your my me him them
    us not no nor any some such very also into onto about over under
    """.split()
)


def tokenize(text: str, lowercase: bool = True, strip_punct: bool = True) -> list[str]:
    """Whitespace tokenization with optional case folding and punctuation
    stripping at token edges. This is the default tokenizer for word-level
    error rates and the n-gram metrics."""
    if lowercase:
        text = text.lower()
    tokens = text.split()
    if strip_punct:
        tokens = [t.strip(string.punctuation) for t in tokens]
        tokens = [t for t in tokens if t]
    return tokens


def collapse_whitespace(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def normalize_for_match(text: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace. Used wherever two
    free-text strings are compared for equality or containment."""
    text = text.lower()
    text = text.translate(str.maketrans("", "", string.punctuation))
    return collapse_whitespace(text)


def count_sentence_terminators(text: str) -> int:
    return sum(text.count(ch) for ch in _SENTENCE_END)


def first_sentence(text: str) -> str:
    """Text up to and including the first sentence terminator (or all of it
    when none is present)."""
    for i, ch in enumerate(text):
        if ch in _SENTENCE_END:
            return text[: i + 1]
    return text
