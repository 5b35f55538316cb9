"""Provider-agnostic VLM access: requests, responses, retries and budgets."""

from __future__ import annotations

import base64
import logging
import mimetypes
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import httpx

from ..errors import BudgetExceeded, ProviderRefusal, TransportError

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
DEFAULT_MAX_IN_FLIGHT = 4


def count_tokens(text: str) -> int:
    """Whitespace token count used for offline cost accounting."""
    return len(text.split())


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.0
    max_output_tokens: int = 512

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "max_output_tokens": self.max_output_tokens}


@dataclass(frozen=True)
class ModelRequest:
    instruction: str
    image_ids: tuple[str, ...] = ()
    decoding: Decoding = field(default_factory=Decoding)

    def __post_init__(self):
        if not self.instruction.strip():
            raise ValueError("instruction must be non-empty")
        if self.decoding.temperature < 0:
            raise ValueError("temperature must be >= 0")
        object.__setattr__(self, "image_ids", tuple(self.image_ids))

    def to_dict(self) -> dict:
        return {
            "instruction": self.instruction,
            "image_ids": list(self.image_ids),
            "decoding": self.decoding.to_dict(),
        }


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0

    @property
    def total(self) -> int:
        return self.input_tokens + self.output_tokens

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(self.input_tokens + other.input_tokens, self.output_tokens + other.output_tokens)

    def to_dict(self) -> dict:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens}


@dataclass(frozen=True)
class ModelResponse:
    text: str
    usage: Usage
    provider_id: str
    cached: bool = False

    def to_dict(self) -> dict:
        return {"text": self.text, "usage": self.usage.to_dict(), "provider_id": self.provider_id}

    @classmethod
    def from_dict(cls, d: dict, cached: bool = False) -> "ModelResponse":
        u = d["usage"]
        return cls(str(d["text"]), Usage(int(u["input_tokens"]), int(u["output_tokens"])),
                   str(d["provider_id"]), cached)


class Provider:
    """Base class. Subclasses implement :meth:`_send`; callers use :meth:`complete`.

    ``complete`` adds the shared behaviour: an in-flight limit, an optional
    token budget checked before dispatch, and bounded retries on
    TransportError with exponential backoff.
    """

    provider_id = "provider"

    def __init__(self, max_in_flight: int = DEFAULT_MAX_IN_FLIGHT, token_budget: int | None = None,
                 max_attempts: int = MAX_ATTEMPTS, backoff: float = 0.5,
                 sleep: Callable[[float], None] = time.sleep):
        if not 1 <= max_attempts <= MAX_ATTEMPTS:
            raise ValueError(f"max_attempts must be in 1..{MAX_ATTEMPTS}")
        self.max_in_flight = max_in_flight
        self.token_budget = token_budget
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self.tokens_spent = 0
        self.upstream_calls = 0

    def __deepcopy__(self, memo):
        # providers hold connections, locks and budgets; copies share the instance
        return self

    def _send(self, request: ModelRequest) -> ModelResponse:
        raise NotImplementedError

    def _reserve(self, request: ModelRequest) -> None:
        if self.token_budget is None:
            return
        estimate = count_tokens(request.instruction)
        with self._lock:
            if self.tokens_spent + estimate > self.token_budget:
                raise BudgetExceeded(
                    f"{self.provider_id}: {self.tokens_spent} spent + ~{estimate} requested "
                    f"exceeds budget {self.token_budget}"
                )

    def complete(self, request: ModelRequest) -> ModelResponse:
        self._reserve(request)
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    with self._lock:
                        self.upstream_calls += 1
                    response = self._send(request)
            except TransportError as exc:
                log.warning("%s attempt %d/%d failed: %s", self.provider_id, attempt + 1, self.max_attempts, exc)
                last = exc
                continue
            with self._lock:
                self.tokens_spent += response.usage.total
            return response
        assert last is not None
        raise last


def complete(provider: Provider, request: ModelRequest) -> ModelResponse:
    return provider.complete(request)


Responder = Union[str, Callable[[ModelRequest], str]]
Matcher = Union[str, "re.Pattern[str]", Callable[[ModelRequest], bool]]


@dataclass
class Rule:
    matcher: Matcher
    response: Responder
    image_id: str | None = None

    def matches(self, request: ModelRequest) -> bool:
        if self.image_id is not None and self.image_id not in request.image_ids:
            return False
        m = self.matcher
        if callable(m) and not isinstance(m, re.Pattern):
            return bool(m(request))
        if isinstance(m, re.Pattern):
            return m.search(request.instruction) is not None
        return m in request.instruction

    def render(self, request: ModelRequest) -> str:
        return self.response(request) if callable(self.response) else self.response


class ScriptedProvider(Provider):
    """Deterministic rule-based stand-in for a VLM. The first matching rule wins.

    Token usage is synthesised from whitespace token counts.
    """

    def __init__(self, rules: Sequence[Rule | tuple] = (), default_text: str = "",
                 provider_id: str = "scripted", **kwargs):
        super().__init__(**kwargs)
        self.rules = [r if isinstance(r, Rule) else Rule(*r) for r in rules]
        self.default_text = default_text
        self.provider_id = provider_id
        self.requests: list[ModelRequest] = []

    def _send(self, request: ModelRequest) -> ModelResponse:
        with self._lock:
            self.requests.append(request)
        text = self.default_text
        for rule in self.rules:
            if rule.matches(request):
                text = rule.render(request)
                break
        usage = Usage(count_tokens(request.instruction), count_tokens(text))
        return ModelResponse(text, usage, self.provider_id)

    @classmethod
    def from_trace(cls, exchanges: Sequence[tuple[str, str]], **kwargs) -> "ScriptedProvider":
        """Replay recorded (instruction, response) pairs by exact instruction match."""
        table = dict(exchanges)
        rules = [Rule(lambda r, t=table: r.instruction in t, lambda r, t=table: t[r.instruction])]
        return cls(rules, **kwargs)


class OpenAICompatibleProvider(Provider):
    """Chat-completions HTTP provider (OpenAI wire format).

    The API key is read from ``COPKIT_API_KEY_<NAME>``; image ids are resolved
    to files under ``image_root`` and sent inline as data URLs.
    """

    def __init__(self, name: str, model: str, base_url: str = "https://api.openai.com/v1",
                 image_root: str | Path | None = None, image_suffixes: Sequence[str] = (".jpg", ".png", ".jpeg"),
                 timeout: float = 60.0, client: httpx.Client | None = None, **kwargs):
        super().__init__(**kwargs)
        self.name = name
        self.model = model
        self.provider_id = f"{name}:{model}"
        self.base_url = base_url.rstrip("/")
        self.image_root = Path(image_root) if image_root else None
        self.image_suffixes = tuple(image_suffixes)
        self._client = client or httpx.Client(timeout=timeout)

    @property
    def api_key(self) -> str | None:
        env = "COPKIT_API_KEY_" + re.sub(r"[^A-Z0-9]", "_", self.name.upper())
        return os.environ.get(env)

    def _image_url(self, image_id: str) -> str:
        if self.image_root is None:
            raise ProviderRefusal(f"image {image_id!r} requested but no image_root configured")
        candidates = [self.image_root / image_id] + [self.image_root / f"{image_id}{s}" for s in self.image_suffixes]
        for path in candidates:
            if path.is_file():
                mime = mimetypes.guess_type(path.name)[0] or "image/jpeg"
                return f"data:{mime};base64," + base64.b64encode(path.read_bytes()).decode("ascii")
        raise ProviderRefusal(f"image {image_id!r} not found under {self.image_root}")

    def payload(self, request: ModelRequest) -> dict:
        content: list[dict] = [{"type": "image_url", "image_url": {"url": self._image_url(i)}}
                               for i in request.image_ids]
        content.append({"type": "text", "text": request.instruction})
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_output_tokens,
        }

    def _send(self, request: ModelRequest) -> ModelResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(f"{self.base_url}/chat/completions", json=self.payload(request), headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise ProviderRefusal(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            choice = body["choices"][0]
            text = choice["message"].get("content") or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed response body: {exc}") from exc
        if choice.get("finish_reason") == "content_filter" or choice["message"].get("refusal"):
            raise ProviderRefusal(choice["message"].get("refusal") or "content filtered")
        u = body.get("usage") or {}
        usage = Usage(int(u.get("prompt_tokens", 0)), int(u.get("completion_tokens", 0)))
        return ModelResponse(text, usage, self.provider_id)
