from .cache import CachedProvider, cache_key, with_cache
from .providers import (
    Decoding,
    ModelRequest,
    ModelResponse,
    OpenAICompatibleProvider,
    Provider,
    Rule,
    ScriptedProvider,
    Usage,
    complete,
    count_tokens,
)
from .usage import usage_report

__all__ = [
    "CachedProvider", "Decoding", "ModelRequest", "ModelResponse", "OpenAICompatibleProvider",
    "Provider", "Rule", "ScriptedProvider", "Usage", "cache_key", "complete", "count_tokens",
    "usage_report", "with_cache",
]
