"""Whitespace + punctuation tokenizer used everywhere span indices matter.

Span supervision, decoding and evaluation all live in this token space, so the
tokenizer is deliberately boring: words (with internal apostrophes) and single
punctuation marks. `detokenize` restores conventional spacing, which round-trips
for ordinary prose.
"""

from __future__ import annotations

import re
from typing import Sequence

TOKEN_RE = re.compile(r"\w+(?:'\w+)?|[^\w\s]")

# Punctuation that glues to the preceding token when detokenizing.
_NO_SPACE_BEFORE = {".", ",", ";", ":", "!", "?", ")", "]", "}", "%", "'"}
_NO_SPACE_AFTER = {"(", "[", "{"}


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text)


def detokenize(tokens: Sequence[str]) -> str:
    parts: list[str] = []
    for tok in tokens:
        if parts and tok not in _NO_SPACE_BEFORE and parts[-1] not in _NO_SPACE_AFTER:
            parts.append(" ")
        parts.append(tok)
    return "".join(parts)


def find_subsequence(haystack: Sequence[str], needle: Sequence[str]) -> list[int]:
    """Start indices of every contiguous occurrence of needle inside haystack."""
    if not needle or len(needle) > len(haystack):
        return []
    first = needle[0]
    hits = []
    for i in range(len(haystack) - len(needle) + 1):
        if haystack[i] == first and list(haystack[i : i + len(needle)]) == list(needle):
            hits.append(i)
    return hits
