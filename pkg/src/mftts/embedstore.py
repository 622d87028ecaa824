"""Word embeddings: static lookup tables and per-utterance contextual dumps."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, EmptyTable
from .featalign import FeatureMatrix, read_matrix, write_matrix
from .textfront import Token

logger = logging.getLogger(__name__)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a_64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    words: Dict[str, int]
    vectors: np.ndarray

    @classmethod
    def from_dict(cls, table: Dict[str, Sequence[float]]) -> "EmbeddingTable":
        if not table:
            raise EmptyTable("embedding table has no entries")
        words = {w.lower(): i for i, w in enumerate(table)}
        vectors = np.asarray(list(table.values()), dtype=np.float32)
        if vectors.ndim != 2:
            raise DimensionMismatch(0)
        return cls(vectors.shape[1], words, vectors)

    def __contains__(self, word: str) -> bool:
        return word in self.words

    def __getitem__(self, word: str) -> np.ndarray:
        return self.vectors[self.words[word]]

    def __len__(self) -> int:
        return len(self.words)

    @property
    def std(self) -> np.ndarray:
        if len(self.vectors) < 2:
            return np.ones(self.dim, dtype=np.float32)
        return self.vectors.std(axis=0).astype(np.float32)

    def oov_vector(self, word: str) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(fnv1a_64(word)))
        return (rng.standard_normal(self.dim) * self.std).astype(np.float32)

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for word, i in self.words.items():
                f.write(word + " " + " ".join(repr(float(x)) for x in self.vectors[i]) + "\n")


def load_table(path: Union[str, Path]) -> EmbeddingTable:
    """Read ``word v1 ... vN`` lines; the first line fixes N."""
    words: Dict[str, int] = {}
    rows = []
    dim: Optional[int] = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise DimensionMismatch(lineno, dim, 0)
            try:
                vec = [float(x) for x in parts[1:]]
            except ValueError as exc:
                raise DimensionMismatch(lineno) from exc
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DimensionMismatch(lineno, dim, len(vec))
            word = parts[0].lower()
            if word in words:
                rows[words[word]] = vec
            else:
                words[word] = len(rows)
                rows.append(vec)
    if dim is None:
        raise EmptyTable(f"{path} contains no embeddings")
    return EmbeddingTable(dim, words, np.asarray(rows, dtype=np.float32))


def lookup_utterance(tokens: Sequence[Token], table: EmbeddingTable) -> np.ndarray:
    rows = []
    for tok in tokens:
        if not tok.is_word:
            continue
        if tok.text in table:
            rows.append(table[tok.text])
        else:
            logger.info("out-of-vocabulary word %r gets a hashed random vector", tok.text)
            rows.append(table.oov_vector(tok.text))
    if not rows:
        return np.zeros((0, table.dim), dtype=np.float32)
    return np.stack(rows).astype(np.float32)


@dataclass
class ContextualEmbeddings:
    utt_id: str
    vectors: np.ndarray

    @classmethod
    def load(cls, path: Union[str, Path], n_words: Optional[int] = None) -> "ContextualEmbeddings":
        m = read_matrix(path)
        utt_id = m.meta.get("utt_id", Path(path).stem)
        if n_words is not None and m.rows != n_words:
            raise DimensionMismatch(0, n_words, m.rows)
        return cls(utt_id, m.data)

    def save(self, path: Union[str, Path]) -> None:
        write_matrix(FeatureMatrix(self.vectors, {"utt_id": self.utt_id, "kind": "emb"}), path)


def utterance_embeddings(
    tokens: Sequence[Token],
    table: Optional[EmbeddingTable],
    contextual: Optional[Union[str, Path]] = None,
    utt_id: str = "",
) -> np.ndarray:
    """Contextual ``.emb`` file when given, otherwise static table lookup."""
    n_words = sum(1 for t in tokens if t.is_word)
    if contextual is not None and Path(contextual).exists():
        return ContextualEmbeddings.load(contextual, n_words).vectors
    if table is None:
        raise EmptyTable(f"no embedding table and no contextual file for {utt_id or 'utterance'}")
    return lookup_utterance(tokens, table)
