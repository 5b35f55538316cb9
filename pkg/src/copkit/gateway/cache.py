"""Content-addressed on-disk response cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from collections import defaultdict
from pathlib import Path

from ..errors import CacheIOError
from .providers import ModelRequest, ModelResponse, Provider

log = logging.getLogger(__name__)


def cache_key(provider_id: str, request: ModelRequest) -> str:
    payload = json.dumps([provider_id, request.instruction, list(request.image_ids), request.decoding.to_dict()],
                         sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class CachedProvider(Provider):
    """Wraps a provider and replays responses stored under ``cache_dir/<key>.json``.

    Unreadable entries are treated as misses and rewritten.
    """

    def __init__(self, inner: Provider, cache_dir: str | Path):
        self.inner = inner
        self.provider_id = inner.provider_id
        self.max_in_flight = inner.max_in_flight
        self.cache_dir = Path(cache_dir)
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CacheIOError(f"cannot create cache dir {self.cache_dir}: {exc}") from exc
        if not os.access(self.cache_dir, os.W_OK):
            raise CacheIOError(f"cache dir {self.cache_dir} is not writable")
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)

    @property
    def upstream_calls(self) -> int:
        return self.inner.upstream_calls

    @property
    def requests(self) -> int:
        return self.hits + self.misses

    def path_for(self, request: ModelRequest) -> Path:
        return self.cache_dir / f"{cache_key(self.provider_id, request)}.json"

    def _read(self, path: Path) -> ModelResponse | None:
        try:
            with open(path, encoding="utf-8") as fh:
                return ModelResponse.from_dict(json.load(fh), cached=True)
        except FileNotFoundError:
            return None
        except (OSError, ValueError, KeyError, TypeError) as exc:
            log.warning("corrupt cache entry %s (%s); refetching", path.name, exc)
            return None

    def _write(self, path: Path, response: ModelResponse) -> None:
        try:
            fd, tmp = tempfile.mkstemp(dir=self.cache_dir, prefix=".tmp-", suffix=".json")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(response.to_dict(), fh, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, path)
        except OSError as exc:
            raise CacheIOError(f"cannot write {path}: {exc}") from exc

    def complete(self, request: ModelRequest) -> ModelResponse:
        path = self.path_for(request)
        with self._lock:
            key_lock = self._key_locks[path.name]
        with key_lock:
            hit = self._read(path)
            if hit is not None:
                with self._lock:
                    self.hits += 1
                return hit
            response = self.inner.complete(request)
            self._write(path, response)
            with self._lock:
                self.misses += 1
            return response


def with_cache(provider: Provider, cache_dir: str | Path) -> CachedProvider:
    return CachedProvider(provider, cache_dir)
