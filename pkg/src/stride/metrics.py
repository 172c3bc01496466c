"""Answer normalization and EM / token F1 scoring."""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")


def _strip_punctuation(text: str) -> str:
    return "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))


def normalize(text: str) -> str:
    """Lowercase, drop punctuation, drop articles, collapse whitespace."""
    text = _strip_punctuation(text.lower())
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, golds: Sequence[str]) -> int:
    if not golds:
        raise ValueError("exact_match needs at least one gold answer")
    p = normalize(pred)
    return int(any(p == normalize(g) for g in golds))


@dataclass(frozen=True)
class F1Result:
    f1: float
    precision: float
    recall: float


def _token_f1(pred_tokens: list[str], gold_tokens: list[str]) -> F1Result:
    if not pred_tokens and not gold_tokens:
        # both normalize to empty: they are an exact match
        return F1Result(1.0, 1.0, 1.0)
    if not pred_tokens or not gold_tokens:
        return F1Result(0.0, 0.0, 0.0)
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return F1Result(0.0, 0.0, 0.0)
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return F1Result(2 * precision * recall / (precision + recall), precision, recall)


def f1(pred: str, golds: Sequence[str]) -> F1Result:
    """Token-overlap F1 against the best-scoring gold answer."""
    if not golds:
        raise ValueError("f1 needs at least one gold answer")
    pred_tokens = normalize(pred).split()
    best: F1Result | None = None
    for gold in golds:
        res = _token_f1(pred_tokens, normalize(gold).split())
        if best is None or res.f1 > best.f1:
            best = res
    assert best is not None
    return best


def best_gold(pred: str, golds: Sequence[str]) -> str:
    """The gold answer that maximizes F1 (first one on ties)."""
    pred_tokens = normalize(pred).split()
    scores = [_token_f1(pred_tokens, normalize(g).split()).f1 for g in golds]
    return golds[scores.index(max(scores))]


def score(pred: str, golds: Sequence[str]) -> dict[str, float]:
    res = f1(pred, golds)
    return {
        "em": float(exact_match(pred, golds)),
        "f1": res.f1,
        "precision": res.precision,
        "recall": res.recall,
    }


def aggregate(per_question: Iterable[dict[str, float]]) -> dict[str, float]:
    rows = list(per_question)
    keys = ("em", "f1", "precision", "recall")
    if not rows:
        return {k: 0.0 for k in keys} | {"count": 0}
    out: dict[str, float] = {k: sum(r[k] for r in rows) / len(rows) for k in keys}
    out["count"] = len(rows)
    return out
