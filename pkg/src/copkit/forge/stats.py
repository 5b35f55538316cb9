"""Dataset statistics and train/test semantic overlap."""

from __future__ import annotations

from collections import Counter
from typing import Callable, Mapping, Sequence

import numpy as np

from ..core import Procedure
from ..embeddings import EmbeddingStore
from ..errors import MissingEmbedding
from .instances import Instance

STAT_ROWS = ("total_samples", "mean_step_length", "step_length_std", "min_step_length", "max_step_length")


def _length(item) -> int:
    if isinstance(item, Instance):
        return item.step_length
    if isinstance(item, Procedure):
        return len(item.steps)
    return int(item["meta"]["step_length"])


def _domain(item) -> str:
    if isinstance(item, (Instance, Procedure)):
        return item.domain
    return str(item["meta"]["domain"])


def split_stats(items: Sequence) -> dict:
    lengths = np.array([_length(i) for i in items], dtype=float)
    if lengths.size == 0:
        return {"total_samples": 0, "mean_step_length": 0.0, "step_length_std": 0.0,
                "min_step_length": 0, "max_step_length": 0, "domains": {}}
    return {
        "total_samples": int(lengths.size),
        "mean_step_length": float(lengths.mean()),
        "step_length_std": float(lengths.std()),  # population std
        "min_step_length": int(lengths.min()),
        "max_step_length": int(lengths.max()),
        "domains": dict(sorted(Counter(_domain(i) for i in items).items())),
    }


def corpus_stats(dataset: Mapping[str, Sequence] | Sequence) -> dict:
    """Per-split statistics plus a pooled ``total`` column.

    ``dataset`` maps split name to instances/procedures; a bare sequence is
    treated as a single ``all`` split.
    """
    if not isinstance(dataset, Mapping):
        dataset = {"all": list(dataset)}
    table = {name: split_stats(items) for name, items in dataset.items()}
    if len(dataset) > 1:
        pooled = [i for items in dataset.values() for i in items]
        table["total"] = split_stats(pooled)
    return table


def format_stats(table: dict) -> str:
    """Aligned-column text rendering of :func:`corpus_stats` output."""
    cols = list(table)
    domains = sorted({d for col in table.values() for d in col["domains"]})
    rows = [("metric", *cols)]
    for key in STAT_ROWS:
        vals = []
        for c in cols:
            v = table[c][key]
            vals.append(f"{v:.2f}" if isinstance(v, float) else str(v))
        rows.append((key, *vals))
    for d in domains:
        rows.append((f"domain:{d}", *(str(table[c]["domains"].get(d, 0)) for c in cols)))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths)))
             for r in rows]
    return "\n".join(lines) + "\n"


def _default_key(item) -> str:
    if isinstance(item, Instance):
        return item.visual.source_procedure
    if isinstance(item, Procedure):
        return item.id
    return str(item)


def semantic_overlap(train: Sequence, test: Sequence, text_store: EmbeddingStore,
                     key: Callable = _default_key, bins: int = 20) -> dict:
    """For each test item, the max cosine against all train items; reports the median.

    Items are looked up in ``text_store`` by ``key(item)`` (procedure id by default).
    """
    def matrix(items):
        ids = [key(i) for i in items]
        missing = [k for k in ids if k not in text_store]
        if missing:
            raise MissingEmbedding(f"{len(missing)} item(s) lack text embeddings, e.g. {missing[:5]}")
        m = np.stack([text_store.get(k).values for k in ids]) if ids else np.zeros((0, text_store.dim or 0))
        return m / np.linalg.norm(m, axis=1, keepdims=True) if ids else m

    if not train or not test:
        return {"median_cosine": None, "max_cosines": [], "histogram": {"counts": [], "edges": []}}
    sims = matrix(test) @ matrix(train).T
    best = np.clip(sims.max(axis=1), -1.0, 1.0)
    counts, edges = np.histogram(best, bins=bins, range=(-1.0, 1.0))
    return {
        "median_cosine": float(np.median(best)),
        "max_cosines": best.tolist(),
        "histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
    }
