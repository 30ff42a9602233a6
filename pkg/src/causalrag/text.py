"""Shared text utilities: label normalization, tokenization, sentence splitting.

Every module that compares surface text (graph labels, claim spans, support
matching) goes through `normalize_label` so matching is deterministic.
"""

from __future__ import annotations

import re
import unicodedata

_TERMINAL_PUNCT = ".,;:!?"
_TOKEN_RE = re.compile(r"[a-z0-9]+")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


def normalize_label(text: str) -> str:
    """Unicode NFC, lowercase, collapse whitespace, strip terminal punctuation."""
    s = unicodedata.normalize("NFC", text)
    s = " ".join(s.split()).lower()
    s = s.rstrip(_TERMINAL_PUNCT).strip()
    return s


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens, in order of appearance."""
    return _TOKEN_RE.findall(text.lower())


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation followed by whitespace; drops empty parts."""
    parts = _SENTENCE_RE.split(text.strip())
    return [p.strip() for p in parts if p.strip()]
