"""Lexical features from word vectors and a time-aligned transcript.

The feature for a prediction target at time t is a 7-slot word window: the
current word (latest onset <= t), three words back and three ahead. Each
present slot contributes its embedding concatenated with a timing offset,
onset - t in seconds (negative for words that started before the target);
absent slots are all-zero rows including the timing column.
"""

from __future__ import annotations

import logging
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PAST_WORDS = 3
FUTURE_WORDS = 3
WINDOW_SLOTS = PAST_WORDS + 1 + FUTURE_WORDS


@dataclass(frozen=True)
class WordToken:
    word: str
    onset: float
    offset: float

    def __post_init__(self):
        if self.offset < self.onset:
            raise ValueError(f"word {self.word!r}: offset {self.offset} < onset {self.onset}")


class EmbeddingTable:
    """Word -> vector lookup with insertion-ordered vocabulary."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self.dim = dim
        self.vectors = vectors

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, word):
        return word in self.vectors

    def to_matrix(self) -> tuple[list[str], np.ndarray]:
        """Vocabulary in insertion order plus the stacked vector matrix."""
        words = list(self.vectors)
        mat = np.stack([self.vectors[w] for w in words]) if words \
            else np.zeros((0, self.dim))
        return words, mat


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Parse a text word-vector file.

    Lines are `word v1 .. vd` separated by spaces. An optional first line
    `<count> <dim>` (two integer tokens) is treated as a header. Duplicate
    words keep the last vector with a warning; malformed lines raise
    ValueError naming the line number.
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split(" ")
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue                      # header line
                except ValueError:
                    pass
            word, values = parts[0], parts[1:]
            if not values:
                raise ValueError(f"{path}: line {lineno}: no vector values")
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ValueError(
                    f"{path}: line {lineno}: expected {dim} values, got {len(vec)}"
                )
            if word in vectors:
                log.warning("duplicate vector for %r (line %d); keeping the last", word, lineno)
            vectors[word] = vec
    if not vectors:
        raise ValueError(f"{path}: no vectors found")
    return EmbeddingTable(vectors=vectors, dim=dim)


def embed_word(table: EmbeddingTable, word: str) -> np.ndarray:
    """Vector for a word; falls back to lowercase, then to a zero vector."""
    vec = table.vectors.get(word)
    if vec is None:
        vec = table.vectors.get(word.lower())
    if vec is None:
        return np.zeros(table.dim)
    return vec


def read_transcript(path: str | Path) -> list[WordToken]:
    """Read `onset_ms<TAB>offset_ms<TAB>word` rows sorted by onset."""
    words = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}: line {lineno}: expected 3 tab-separated fields")
            onset_ms, offset_ms, word = parts
            words.append(WordToken(word=word,
                                   onset=float(onset_ms) / 1000.0,
                                   offset=float(offset_ms) / 1000.0))
    words.sort(key=lambda w: (w.onset, w.offset))
    return words


def write_transcript(words: list[WordToken], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w in words:
            fh.write(f"{round(w.onset * 1000)}\t{round(w.offset * 1000)}\t{w.word}\n")


def select_window(words: list[WordToken], t: float) -> list[WordToken | None]:
    """The 7 window slots for target time t; None marks an absent slot.

    Slot 3 is the current word (latest onset <= t), slots 0-2 the three
    words before it, slots 4-6 the three after. When t precedes every
    onset there is no current word and slots 4-6 hold the first words.
    """
    onsets = [w.onset for w in words]
    cur = bisect_right(onsets, t) - 1
    slots: list[WordToken | None] = []
    for j in range(WINDOW_SLOTS):
        idx = cur + (j - PAST_WORDS)
        slots.append(words[idx] if 0 <= idx < len(words) else None)
    return slots


def assemble_text_window(table: EmbeddingTable, words: list[WordToken],
                         t: float) -> np.ndarray:
    """(7, dim+1) feature matrix for target time t.

    Row = [embedding, onset - t] for present slots, zeros otherwise.
    """
    out = np.zeros((WINDOW_SLOTS, table.dim + 1))
    for i, tok in enumerate(select_window(words, t)):
        if tok is None:
            continue
        out[i, :table.dim] = embed_word(table, tok.word)
        out[i, table.dim] = tok.onset - t
    return out
