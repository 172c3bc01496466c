"""Exact inner-product scan plus top-k selection.

Two interchangeable backends: a numba kernel (default) and a pure numpy path.
Set ``STRIDE_DISABLE_NUMBA=1`` to force numpy. Both return indices ordered by
(score desc, index asc); rows are stored sorted by doc id, so index order is
the doc-id tie-break.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("STRIDE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLE:
        raise ImportError("numba disabled by STRIDE_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"

# beyond this k the insertion buffer loses to a full sort
_INSERTION_K_MAX = 64
_NUMPY_BLOCK_ROWS = 8192


def scores_numpy(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    out = np.empty(matrix.shape[0], dtype=np.float64)
    for start in range(0, matrix.shape[0], _NUMPY_BLOCK_ROWS):
        block = matrix[start : start + _NUMPY_BLOCK_ROWS].T
        # accumulate column by column: the same left-to-right order as the
        # compiled loop, so both backends agree bit for bit
        acc = np.zeros(block.shape[1], dtype=np.float64)
        for j in range(block.shape[0]):
            acc += block[j] * query[j]
        out[start : start + block.shape[1]] = acc
    return out


def topk_numpy(matrix: np.ndarray, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    scores = scores_numpy(matrix, query)
    k = min(k, scores.shape[0])
    order = np.argsort(-scores, kind="stable")[:k]
    return order.astype(np.int64), scores[order]


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _scores_nb(matrix, query):  # pragma: no cover - compiled
        n, d = matrix.shape
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += matrix[i, j] * query[j]
            out[i] = s
        return out

    @njit(cache=True, nogil=True)
    def _select_nb(scores, k):  # pragma: no cover - compiled
        n = scores.shape[0]
        k = min(k, n)
        idx = np.empty(k, dtype=np.int64)
        best = np.empty(k, dtype=np.float64)
        filled = 0
        for i in range(n):
            s = scores[i]
            if filled == k:
                # earlier index wins ties, so an equal score never displaces
                if s <= best[k - 1]:
                    continue
                j = k - 1
            else:
                j = filled
                filled += 1
            while j > 0 and best[j - 1] < s:
                best[j] = best[j - 1]
                idx[j] = idx[j - 1]
                j -= 1
            best[j] = s
            idx[j] = i
        return idx, best

    def topk_numba(matrix: np.ndarray, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        scores = _scores_nb(matrix, query)
        if k > _INSERTION_K_MAX:
            k = min(k, scores.shape[0])
            order = np.argsort(-scores, kind="stable")[:k]
            return order.astype(np.int64), scores[order]
        return _select_nb(scores, k)

else:
    topk_numba = None


def topk(matrix: np.ndarray, query: np.ndarray, k: int, backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    backend = backend or BACKEND
    if k <= 0 or matrix.shape[0] == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    if backend == "numba":
        if topk_numba is None:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return topk_numba(matrix, query, k)
    if backend == "numpy":
        return topk_numpy(matrix, query, k)
    raise ValueError(f"unknown backend {backend!r}")
