"""Frozen word vectors: file loading, deterministic synthesis, and lookup.

Embeddings never receive gradients — lookup produces constant tensors, and
the table lives outside the trainable parameter store.
"""

from __future__ import annotations

import gzip
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

UNK_TOKEN = "<unk>"


class Vocabulary:
    """Dense token->index map with UNK reserved at index 0."""

    def __init__(self, tokens):
        uniq = sorted(set(tokens) - {UNK_TOKEN})
        self._index = {UNK_TOKEN: 0}
        for i, tok in enumerate(uniq, start=1):
            self._index[tok] = i

    @classmethod
    def from_utterances(cls, *pools) -> "Vocabulary":
        tokens = [tok for pool in pools for utt in pool for tok in utt.tokens]
        return cls(tokens)

    def index(self, token: str) -> int:
        return self._index.get(token, 0)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __len__(self) -> int:
        return len(self._index)

    def tokens(self) -> list[str]:
        return list(self._index)  # insertion order == index order


@dataclass
class EmbeddingTable:
    matrix: np.ndarray  # (V, d_w), frozen

    @property
    def d_w(self) -> int:
        return self.matrix.shape[1]


def _open_maybe_gzip(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def load_vectors(path, vocab: Vocabulary) -> EmbeddingTable:
    """Load a `<count> <dim>` header + `token v_1 .. v_dim` lines vector file.

    In-vocabulary tokens get their file vectors; UNK and any token missing
    from the file get the mean of all vectors in the file.
    """
    with _open_maybe_gzip(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(p.isdigit() for p in header):
            raise ValueError(f"{path}: malformed header, expected '<count> <dim>'")
        count, dim = int(header[0]), int(header[1])
        if count < 1:
            raise ValueError(f"{path}: file declares zero vectors")
        total = np.zeros(dim)
        loaded = 0
        by_token: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(values)}")
            vec = np.array([float(v) for v in values])
            if token not in by_token:  # first occurrence wins
                if token in vocab:
                    by_token[token] = vec
                total += vec
                loaded += 1
    if loaded == 0:
        raise ValueError(f"{path}: no vectors loaded")
    fallback = total / loaded
    matrix = np.tile(fallback, (len(vocab), 1))
    for token, vec in by_token.items():
        matrix[vocab.index(token)] = vec
    return EmbeddingTable(matrix=matrix)


def synthesize_vectors(vocab: Vocabulary, d_w: int, seed: int) -> EmbeddingTable:
    """Draw each token's vector from N(0, 1/d_w), keyed by hash(token, seed).

    Hash-keyed streams make the vector of a token independent of what else
    is in the vocabulary, so shared tokens across runs agree.
    """
    if d_w < 1:
        raise ValueError("d_w must be >= 1")
    std = 1.0 / math.sqrt(d_w)
    matrix = np.empty((len(vocab), d_w))
    for token in vocab.tokens():
        digest = hashlib.blake2b(f"{seed}\x00{token}".encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        matrix[vocab.index(token)] = rng.normal(0.0, std, size=d_w)
    return EmbeddingTable(matrix=matrix)


def embed_tokens(tokens, table: EmbeddingTable, vocab: Vocabulary) -> Tensor:
    """Map a token sequence to a constant (T, d_w) tensor of frozen vectors."""
    if len(tokens) == 0:
        raise ValueError("cannot embed an empty token sequence")
    rows = np.array([vocab.index(tok) for tok in tokens])
    return Tensor(table.matrix[rows])
