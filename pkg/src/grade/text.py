"""Tokenization shared by keyword extraction, the toy encoder and the text baselines."""

import re

_PUNCT = re.compile(r"[^\w\s]|_")


def tokenize(text: str) -> list[str]:
    """Lowercase, replace punctuation with spaces, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()
