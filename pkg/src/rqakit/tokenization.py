"""Tokenizers used for passage chunking and token budgeting.

The corpus chunker only needs token *counts* and whitespace-delimited span
boundaries, so the default tokenizer splits on whitespace. Model-specific
tokenizers (see ``rqakit.models``) can be plugged in wherever a
``Tokenizer`` is accepted.
"""

import re
from typing import Protocol

_TOKEN_RE = re.compile(r"\S+")


class Tokenizer(Protocol):
    """Minimal interface: deterministic tokenize + a stable identity string."""

    identity: str

    def tokenize(self, text: str) -> list[str]: ...


class WhitespaceTokenizer:
    """Splits on runs of whitespace. The default for chunking and budgets."""

    identity = "whitespace"

    def tokenize(self, text: str) -> list[str]:
        return text.split()

    def count(self, text: str) -> int:
        return len(text.split())


def token_spans(text: str) -> list[tuple[int, int]]:
    """(start, end) character spans of whitespace-delimited tokens."""
    return [m.span() for m in _TOKEN_RE.finditer(text)]


def count_tokens(tokenizer: Tokenizer, text: str) -> int:
    return len(tokenizer.tokenize(text))
