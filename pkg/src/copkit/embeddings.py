"""Fixed-dimension embedding storage with exact cosine search."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .core import read_jsonl, write_jsonl
from .errors import DimensionMismatch, ParseError, UnknownId, ZeroVector

DEFAULT_DIM = 512
TIE_DECIMALS = 12


@dataclass(frozen=True)
class EmbeddingVector:
    id: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ParseError(f"{self.id}: embedding must be a non-empty 1-d array")
        if not np.all(np.isfinite(values)):
            raise ParseError(f"{self.id}: embedding contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other):
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.values, other.values)

    __hash__ = None


def cosine_similarity(a, b) -> float:
    """Cosine of two vectors (EmbeddingVector or array-like)."""
    va = a.values if isinstance(a, EmbeddingVector) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, EmbeddingVector) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"dims {va.shape} vs {vb.shape}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine undefined for an all-zero vector")
    score = float(np.dot(va, vb) / (na * nb))
    return max(-1.0, min(1.0, score))


@dataclass
class EmbeddingStore:
    """Id-keyed vectors of one dimension, with an optional domain tag per id.

    Treat as read-only once built; queries normalise rows lazily and cache the
    matrix.
    """

    dim: int | None = None
    entries: dict[str, EmbeddingVector] = field(default_factory=dict)
    tags: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self._matrix = None
        self._ids: list[str] = []
        self._row: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __eq__(self, other):
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (self.dim == other.dim and self.tags == other.tags
                and self.entries.keys() == other.entries.keys()
                and all(self.entries[k] == other.entries[k] for k in self.entries))

    def add(self, id: str, values, tag: str | None = None) -> None:
        vec = EmbeddingVector(id, values)
        if self.dim is None:
            self.dim = vec.dim
        elif vec.dim != self.dim:
            raise DimensionMismatch(f"{id}: dim {vec.dim} != store dim {self.dim}")
        if id in self.entries:
            raise ParseError(f"duplicate embedding id {id!r}")
        self.entries[id] = vec
        if tag is not None:
            self.tags[id] = tag
        self._matrix = None

    def get(self, id: str) -> EmbeddingVector:
        try:
            return self.entries[id]
        except KeyError:
            raise UnknownId(f"no embedding for {id!r}") from None

    def merged(self, other: "EmbeddingStore") -> "EmbeddingStore":
        out = EmbeddingStore()
        for src in (self, other):
            for k, v in src.entries.items():
                out.add(k, v.values, src.tags.get(k))
        return out

    def _normalized(self):
        if self._matrix is None:
            self._ids = sorted(self.entries)
            self._row = {k: i for i, k in enumerate(self._ids)}
            if self._ids:
                m = np.stack([self.entries[k].values for k in self._ids])
                norms = np.linalg.norm(m, axis=1, keepdims=True)
                norms[norms == 0] = np.inf
                self._matrix = m / norms
            else:
                self._matrix = np.zeros((0, self.dim or 0))
        return self._ids, self._matrix

    def similarities(self, query_id: str) -> dict[str, float]:
        """Cosine of ``query_id`` against every stored id (query included)."""
        q = self.get(query_id)
        if not np.any(q.values):
            raise ZeroVector(f"{query_id} is an all-zero vector")
        ids, m = self._normalized()
        scores = m @ (q.values / np.linalg.norm(q.values))
        return {k: float(min(1.0, max(-1.0, s))) for k, s in zip(ids, scores)}

    def top_k_similar(self, query_id: str, k: int,
                      filter: Callable[[str], bool] | None = None) -> list[tuple[str, float]]:
        """Exact top-k by cosine, excluding the query; ties broken by ascending id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        sims = self.similarities(query_id)
        pool = [(i, s) for i, s in sims.items()
                if i != query_id and (filter is None or filter(i))]
        # scores equal to TIE_DECIMALS places count as ties, so BLAS rounding cannot reorder duplicates
        pool.sort(key=lambda t: (-round(t[1], TIE_DECIMALS), t[0]))
        return pool[:k]

    def ranked(self, query_id: str, filter: Callable[[str], bool] | None = None) -> list[tuple[str, float]]:
        return self.top_k_similar(query_id, max(1, len(self.entries)), filter)

    def to_records(self) -> list[dict]:
        return [
            {"id": k, "domain": self.tags.get(k), "vector": self.entries[k].values.tolist()}
            for k in sorted(self.entries)
        ]


def top_k_similar(store: EmbeddingStore, query_id: str, k: int,
                  filter: Callable[[str], bool] | None = None) -> list[tuple[str, float]]:
    return store.top_k_similar(query_id, k, filter)


def store_from_mapping(vectors: Mapping[str, Iterable[float]], tags: Mapping[str, str] | None = None) -> EmbeddingStore:
    store = EmbeddingStore()
    tags = tags or {}
    for k, v in vectors.items():
        store.add(k, np.asarray(list(v) if not isinstance(v, np.ndarray) else v, dtype=np.float64), tags.get(k))
    return store


def load_store(path: str | Path) -> EmbeddingStore:
    """Load a JSONL (optionally gzipped) store of ``{"id", "domain", "vector"}`` records."""
    store = EmbeddingStore()
    for rec in read_jsonl(path):
        try:
            vid, vec = str(rec["id"]), rec["vector"]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"{path}: malformed embedding record: {exc}") from exc
        store.add(vid, vec, rec.get("domain"))
    return store


def save_store(store: EmbeddingStore, path: str | Path) -> None:
    write_jsonl(path, store.to_records())


def import_embeddings(path: str | Path) -> EmbeddingStore:
    """Read vectors from .npz (ids, vectors[, domains]), .csv (id, domain, v0..) or JSONL."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".npz":
        with np.load(path, allow_pickle=False) as data:
            if "ids" not in data or "vectors" not in data:
                raise ParseError(f"{path}: .npz needs 'ids' and 'vectors' arrays")
            ids = [str(x) for x in data["ids"]]
            vectors = np.asarray(data["vectors"], dtype=np.float64)
            domains = [str(x) for x in data["domains"]] if "domains" in data else [None] * len(ids)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise ParseError(f"{path}: vectors shape {vectors.shape} does not match {len(ids)} ids")
        store = EmbeddingStore()
        for i, vid in enumerate(ids):
            store.add(vid, vectors[i], domains[i] or None)
        return store
    if suffix == ".csv":
        store = EmbeddingStore()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or row[0] == "id":
                    continue
                try:
                    values = [float(x) for x in row[2:]]
                except ValueError as exc:
                    raise ParseError(f"{path}: {exc}") from exc
                if any(math.isnan(v) for v in values):
                    raise ParseError(f"{path}: NaN in {row[0]}")
                store.add(row[0], values, row[1] or None)
        return store
    return load_store(path)
