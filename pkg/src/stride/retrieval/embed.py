from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from ..errors import EmptyText, ValidationError

_EDGE_PUNCT = string.punctuation + "“”‘’«»…"


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    dim: int

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if self.dim <= 0 or values.shape != (self.dim,):
            raise ValidationError(f"embedding shape {values.shape} does not match dim {self.dim}")
        object.__setattr__(self, "values", values)

    def normalized(self) -> EmbeddingVector:
        norm = float(np.sqrt(np.dot(self.values, self.values)))
        if norm == 0.0:
            return self
        return EmbeddingVector(self.values / norm, self.dim)


Embedder = Callable[[str], EmbeddingVector]


def tokenize(text: str) -> list[str]:
    """Whitespace tokens, lowercased, with leading/trailing punctuation removed."""
    raw = text.split()
    toks = [t.lower().strip(_EDGE_PUNCT) for t in raw]
    toks = [t for t in toks if t]
    # a text made only of punctuation still embeds, on its raw tokens
    return toks or [t.lower() for t in raw]


@lru_cache(maxsize=1 << 16)
def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def hash_embed(text: str, dim: int) -> EmbeddingVector:
    """Deterministic hashed bag-of-words embedding, L2-normalized."""
    if dim <= 0:
        raise ValidationError("dim must be positive")
    tokens = tokenize(text)
    if not tokens:
        raise EmptyText("cannot embed empty text")
    counts = np.zeros(dim, dtype=np.float64)
    for tok in tokens:
        counts[_bucket(tok, dim)] += 1.0
    return EmbeddingVector(counts / np.sqrt(np.dot(counts, counts)), dim)


class HashEmbedder:
    def __init__(self, dim: int = 256):
        self.dim = dim

    def __call__(self, text: str) -> EmbeddingVector:
        return hash_embed(text, self.dim)


class RemoteEmbedder:
    """Embeds through the provider's ``/embeddings`` endpoint."""

    def __init__(self, provider, model: str | None = None):
        self.provider = provider
        self.model = model
        self.dim: int | None = None

    def __call__(self, text: str) -> EmbeddingVector:
        return self.batch([text])[0]

    def batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        rows = self.provider.embed(texts, model=self.model)
        out = [EmbeddingVector(np.asarray(r, dtype=np.float64), len(r)).normalized() for r in rows]
        self.dim = out[0].dim if out else self.dim
        return out
