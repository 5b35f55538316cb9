"""Text similarity between a predicted and a reference next step."""

from __future__ import annotations

import re
from collections import Counter
from typing import Callable, Protocol

import numpy as np

from ..embeddings import EmbeddingStore
from ..errors import MissingEmbedding

_TOKEN = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class Scorer(Protocol):
    def __call__(self, prediction: str, reference: str) -> float: ...


def token_f1(prediction: str, reference: str) -> float:
    """Harmonic mean of token precision and recall over lowercase token multisets."""
    pred, ref = Counter(tokenize(prediction)), Counter(tokenize(reference))
    if not pred or not ref:
        return 1.0 if pred == ref else 0.0
    common = sum((pred & ref).values())
    if common == 0:
        return 0.0
    precision = common / sum(pred.values())
    recall = common / sum(ref.values())
    return 2 * precision * recall / (precision + recall)


class GreedyEmbeddingScorer:
    """BERTScore-style F1: each token greedily matched to its most similar
    counterpart by cosine, in both directions.

    Token vectors come from ``store`` keyed by ``key(token)``.
    """

    def __init__(self, store: EmbeddingStore, key: Callable[[str], str] = lambda t: t):
        self.store = store
        self.key = key

    def _matrix(self, tokens: list[str]) -> np.ndarray:
        rows = []
        for t in tokens:
            k = self.key(t)
            if k not in self.store:
                raise MissingEmbedding(f"no token embedding for {t!r}")
            v = self.store.get(k).values
            rows.append(v / np.linalg.norm(v))
        return np.stack(rows)

    def __call__(self, prediction: str, reference: str) -> float:
        p, r = tokenize(prediction), tokenize(reference)
        if not p or not r:
            return 0.0
        sim = self._matrix(p) @ self._matrix(r).T
        precision = float(sim.max(axis=1).mean())
        recall = float(sim.max(axis=0).mean())
        if precision + recall <= 0:
            return 0.0
        return float(np.clip(2 * precision * recall / (precision + recall), 0.0, 1.0))


def similarity_score(prediction: str, reference: str, scorer: Scorer | None = None) -> float:
    """Similarity in [0, 1]; token-overlap F1 unless an embedding scorer is given."""
    if not prediction.strip() or not reference.strip():
        raise ValueError("similarity_score needs non-empty texts")
    return float((scorer or token_f1)(prediction, reference))
