"""Human-evaluation tallies and Fleiss' kappa."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from ..errors import DegenerateAgreement

JUDGMENTS = ("Better", "Equivalent", "Worse")


def fleiss_kappa(matrix: Sequence[Sequence[int]]) -> float:
    """Fleiss' kappa for an items x categories count matrix.

    Every row must sum to the same number of annotators n >= 2.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 1:
        raise ValueError("need an items x categories matrix with at least 2 items")
    if np.any(m < 0):
        raise ValueError("counts must be non-negative")
    n = m.sum(axis=1)
    if not np.all(n == n[0]):
        raise ValueError("every item must be rated by the same number of annotators")
    n = n[0]
    if n < 2:
        raise ValueError("need at least 2 annotators per item")
    items = m.shape[0]
    p_item = (np.square(m).sum(axis=1) - n) / (n * (n - 1))
    p_bar = p_item.mean()
    p_cat = m.sum(axis=0) / (items * n)
    p_e = float(np.square(p_cat).sum())
    if np.isclose(p_e, 1.0):
        if np.isclose(p_bar, 1.0):
            return 1.0
        raise DegenerateAgreement("expected agreement is 1; kappa undefined")
    return float((p_bar - p_e) / (1.0 - p_e))


def annotation_matrix(labels: Iterable[Sequence[str]], categories: Sequence[str] = JUDGMENTS) -> list[list[int]]:
    """Rows of per-annotator labels -> category count rows."""
    out = []
    for row in labels:
        counts = Counter(row)
        unknown = set(counts) - set(categories)
        if unknown:
            raise ValueError(f"unknown categories {sorted(unknown)}")
        out.append([counts.get(c, 0) for c in categories])
    return out


_ALIASES = {"better": "win", "win": "win", "equivalent": "equal", "equal": "equal",
            "worse": "loss", "loss": "loss"}


def pairwise_tally(judgments: Sequence[str]) -> dict[str, float]:
    """Win/equal/loss percentages from Better/Equivalent/Worse judgments."""
    if not judgments:
        raise ValueError("pairwise_tally needs at least one judgment")
    counts = Counter()
    for j in judgments:
        key = _ALIASES.get(str(j).strip().lower())
        if key is None:
            raise ValueError(f"unknown judgment {j!r}")
        counts[key] += 1
    total = len(judgments)
    return {k: 100.0 * counts[k] / total for k in ("win", "equal", "loss")}
