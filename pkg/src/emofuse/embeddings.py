"""Pretrained word-embedding tables, tokenization and fixed-length encoding."""

from __future__ import annotations

import re
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ParseError

DEFAULT_MAX_LEN = 50

# Maximal runs of alphanumeric characters (unicode letters and digits,
# underscore excluded). "don't" splits into "don", "t".
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass
class TokenSequence:
    tokens: list[str]
    source_length: int


@dataclass
class EmbeddedSequence:
    """Fixed-length embedded text: rows past valid_length are zero pad rows."""

    vectors: np.ndarray  # (max_len, dim)
    valid_length: int


class EmbeddingTable:
    """Lowercase word -> vector map, immutable after parsing.

    Word order is the file order, so behaviour never depends on lookup
    frequency. The vocabulary doubles as the English word list used by the
    dataset filter.
    """

    def __init__(self, dim: int, entries: dict[str, np.ndarray]):
        self.dim = dim
        self.entries = entries

    @property
    def words(self) -> list[str]:
        return list(self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, word: str):
        return word in self.entries

    def get(self, word: str) -> np.ndarray | None:
        return self.entries.get(word)


def parse_embedding_file(lines: Iterable[str]) -> EmbeddingTable:
    """Parse `<token> <f1> ... <fd>` lines; d is fixed by the first line.

    Duplicate words keep their first occurrence (a warning is emitted).
    """
    dim = None
    entries: dict[str, np.ndarray] = {}
    n_lines = 0
    for lineno, raw in enumerate(lines, start=1):
        n_lines = lineno
        parts = raw.split()
        if not parts:
            raise ParseError("empty embedding line", line=lineno)
        word = parts[0].lower()
        if dim is None:
            dim = len(parts) - 1
            if dim < 1:
                raise ParseError("first line has no embedding values", line=lineno)
        if len(parts) - 1 != dim:
            raise ParseError(
                f"expected {dim} values for {word!r}, got {len(parts) - 1}", line=lineno
            )
        try:
            vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"bad float for {word!r}: {exc}", line=lineno) from exc
        if word in entries:
            warnings.warn(f"duplicate embedding for {word!r} at line {lineno}; keeping first")
            continue
        vec.flags.writeable = False
        entries[word] = vec
    if n_lines == 0:
        raise ParseError("empty embedding file", line=1)
    return EmbeddingTable(dim, entries)


def serialize_embedding_table(table: EmbeddingTable) -> str:
    """Inverse of parse_embedding_file; float repr round-trips exactly."""
    out = []
    for word, vec in table.entries.items():
        out.append(word + " " + " ".join(repr(float(x)) for x in vec))
    return "\n".join(out) + "\n"


def load_embedding_file(path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        return parse_embedding_file(fh)


def tokenize(text: str) -> TokenSequence:
    """Lowercase and split on maximal runs of non-alphanumeric characters."""
    tokens = _TOKEN_RE.findall(text.lower())
    return TokenSequence(tokens, len(tokens))


def _token_list(tokens) -> list[str]:
    return tokens.tokens if isinstance(tokens, TokenSequence) else list(tokens)


def english_fraction(tokens, table: EmbeddingTable) -> float:
    """Fraction of tokens present in the embedding vocabulary; 0 if empty."""
    toks = _token_list(tokens)
    if not toks:
        return 0.0
    return sum(1 for t in toks if t in table) / len(toks)


def encode_text(tokens, table: EmbeddingTable, max_len: int = DEFAULT_MAX_LEN) -> EmbeddedSequence:
    """Embed the first max_len tokens; OOV words and pad rows are zero vectors."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    toks = _token_list(tokens)
    vectors = np.zeros((max_len, table.dim), dtype=np.float64)
    for i, tok in enumerate(toks[:max_len]):
        vec = table.get(tok)
        if vec is not None:
            vectors[i] = vec
    return EmbeddedSequence(vectors, min(len(toks), max_len))


def word_frequencies(corpus: Iterable) -> list[tuple[str, int]]:
    """Words by descending count; ties broken lexicographically."""
    counts: Counter[str] = Counter()
    for seq in corpus:
        counts.update(_token_list(seq))
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
