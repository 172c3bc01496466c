from .embed import EmbeddingVector, HashEmbedder, RemoteEmbedder, hash_embed, tokenize
from .index import DEFAULT_TOP_K, MAGIC, Index, RankedHit, embedding_text, ingest
from .kernels import BACKEND

__all__ = [
    "BACKEND",
    "DEFAULT_TOP_K",
    "EmbeddingVector",
    "HashEmbedder",
    "Index",
    "MAGIC",
    "RankedHit",
    "RemoteEmbedder",
    "embedding_text",
    "hash_embed",
    "ingest",
    "tokenize",
]
