from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ..errors import DuplicateDocId, EmptyCorpus, IndexFormatError, ValidationError
from ..types import Document
from . import kernels
from .embed import Embedder, EmbeddingVector

MAGIC = b"STRIDX1"
DEFAULT_TOP_K = 5


@dataclass(frozen=True)
class RankedHit:
    doc_id: str
    score: float


def embedding_text(doc: Document, include_title: bool = True) -> str:
    if include_title and doc.title:
        return f"{doc.title}. {doc.text}"
    return doc.text


class Index:
    """Immutable exact dense index. Rows are kept sorted by doc id."""

    def __init__(
        self,
        doc_ids: list[str],
        matrix: np.ndarray,
        embedder: Embedder | None = None,
        documents: Mapping[str, Document] | None = None,
        backend: str | None = None,
    ):
        if len(doc_ids) != matrix.shape[0]:
            raise ValidationError("id table and matrix disagree in length")
        order = sorted(range(len(doc_ids)), key=doc_ids.__getitem__)
        self.doc_ids = [doc_ids[i] for i in order]
        self.matrix = np.ascontiguousarray(matrix[order], dtype=np.float64)
        self.matrix.setflags(write=False)
        self.embedder = embedder
        self.documents = dict(documents or {})
        self.backend = backend

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.doc_ids)

    def document(self, doc_id: str) -> Document:
        return self.documents[doc_id]

    def top_k_vector(self, query: np.ndarray, k: int) -> list[RankedHit]:
        if query.shape != (self.dim,):
            raise ValidationError(f"query dim {query.shape} != index dim {self.dim}")
        idx, scores = kernels.topk(self.matrix, np.ascontiguousarray(query, dtype=np.float64), k, self.backend)
        return [RankedHit(self.doc_ids[i], float(s)) for i, s in zip(idx, scores)]

    def top_k(self, query: str, k: int = DEFAULT_TOP_K) -> list[RankedHit]:
        if self.embedder is None:
            raise ValidationError("index has no embedder attached")
        if k < 1:
            raise ValidationError("k must be positive")
        return self.top_k_vector(self.embedder(query).normalized().values, k)

    def retrieve(self, query: str, k: int = DEFAULT_TOP_K) -> list[Document]:
        return [self.documents[h.doc_id] for h in self.top_k(query, k)]

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", self.dim, len(self.doc_ids)))
            for doc_id in self.doc_ids:
                raw = doc_id.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
            fh.write(self.matrix.astype("<f4").tobytes())

    @classmethod
    def load(
        cls,
        path: str | Path,
        embedder: Embedder | None = None,
        documents: Iterable[Document] | None = None,
        backend: str | None = None,
    ) -> Index:
        data = Path(path).read_bytes()
        if data[: len(MAGIC)] != MAGIC:
            raise IndexFormatError(f"{path}: bad magic header")
        pos = len(MAGIC)
        try:
            dim, count = struct.unpack_from("<II", data, pos)
            pos += 8
            ids = []
            for _ in range(count):
                (n,) = struct.unpack_from("<I", data, pos)
                pos += 4
                ids.append(data[pos : pos + n].decode("utf-8"))
                pos += n
        except struct.error as exc:
            raise IndexFormatError(f"{path}: truncated id table") from exc
        expected = count * dim * 4
        if len(data) - pos != expected:
            raise IndexFormatError(f"{path}: expected {expected} vector bytes, found {len(data) - pos}")
        matrix = np.frombuffer(data, dtype="<f4", count=count * dim, offset=pos).reshape(count, dim)
        docs = {d.id: d for d in documents} if documents is not None else None
        return cls(ids, matrix.astype(np.float64), embedder, docs, backend)


def ingest(
    corpus: Iterable[Document],
    embedder: Embedder,
    include_title: bool = True,
    backend: str | None = None,
) -> Index:
    """Embed every document once and freeze the result into an :class:`Index`."""
    docs: dict[str, Document] = {}
    rows: list[np.ndarray] = []
    for doc in corpus:
        if doc.id in docs:
            raise DuplicateDocId(doc.id)
        docs[doc.id] = doc
        vec: EmbeddingVector = embedder(embedding_text(doc, include_title)).normalized()
        if rows and vec.dim != rows[0].shape[0]:
            raise ValidationError(f"document {doc.id} embedded to dim {vec.dim}, expected {rows[0].shape[0]}")
        rows.append(vec.values)
    if not docs:
        raise EmptyCorpus("corpus is empty")
    return Index(list(docs), np.vstack(rows), embedder, docs, backend)
