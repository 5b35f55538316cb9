import json
import re
import threading
import time

import httpx
import pytest

from copkit.errors import BudgetExceeded, ProviderRefusal, TransportError
from copkit.gateway import (
    CachedProvider,
    ModelRequest,
    OpenAICompatibleProvider,
    Provider,
    Rule,
    ScriptedProvider,
    Usage,
    ModelResponse,
    cache_key,
    usage_report,
)


def req(text="what is the next step?", images=()):
    return ModelRequest(text, tuple(images))


def test_scripted_rule_and_determinism():
    p = ScriptedProvider([("next step", "step_2: X")], default_text="?")
    a, b = p.complete(req()), p.complete(req())
    assert a.text == b.text == "step_2: X"
    assert p.complete(req("hello")).text == "?"
    assert a.usage == Usage(5, 2)


def test_rule_kinds():
    p = ScriptedProvider([
        Rule(re.compile(r"score \d"), "regex"),
        Rule(lambda r: "call" in r.instruction, lambda r: r.instruction.upper()),
        Rule("img", "with image", image_id="i1"),
        Rule("img", "no image"),
    ])
    assert p.complete(req("score 7")).text == "regex"
    assert p.complete(req("call me")).text == "CALL ME"
    assert p.complete(req("img", ["i1"])).text == "with image"
    assert p.complete(req("img", ["i2"])).text == "no image"


def test_request_validation():
    with pytest.raises(ValueError):
        ModelRequest("   ")


def test_budget_checked_before_dispatch():
    p = ScriptedProvider([("", "ok")], token_budget=3)
    with pytest.raises(BudgetExceeded):
        p.complete(req("one two three four five"))
    assert p.upstream_calls == 0


class Flaky(Provider):
    provider_id = "flaky"

    def __init__(self, failures, **kw):
        super().__init__(**kw)
        self.failures = failures

    def _send(self, request):
        if self.failures:
            self.failures -= 1
            raise TransportError("boom")
        return ModelResponse("fine", Usage(1, 1), self.provider_id)


def test_retry_with_backoff():
    sleeps = []
    p = Flaky(2, sleep=sleeps.append, backoff=0.5)
    assert p.complete(req()).text == "fine"
    assert sleeps == [0.5, 1.0]
    assert p.upstream_calls == 3


def test_retry_gives_up_after_three():
    p = Flaky(5, sleep=lambda s: None)
    with pytest.raises(TransportError):
        p.complete(req())
    assert p.upstream_calls == 3


def test_in_flight_limit():
    active, peak, lock = [0], [0], threading.Lock()

    class Slow(Provider):
        def _send(self, request):
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            time.sleep(0.01)
            with lock:
                active[0] -= 1
            return ModelResponse("x", Usage(), "slow")

    p = Slow(max_in_flight=2)
    threads = [threading.Thread(target=p.complete, args=(req(),)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] <= 2


def test_cache_cold_then_warm(tmp_path):
    inner = ScriptedProvider([("", "cached answer")])
    c1 = CachedProvider(inner, tmp_path)
    for text in ("a", "b", "a"):
        c1.complete(req(text))
    assert (c1.hits, c1.misses, inner.upstream_calls) == (1, 2, 2)
    inner2 = ScriptedProvider([("", "cached answer")])
    c2 = CachedProvider(inner2, tmp_path)
    r = c2.complete(req("a"))
    assert r.cached and r.text == "cached answer"
    assert inner2.upstream_calls == 0


def test_cache_corrupt_entry_is_refetched(tmp_path):
    inner = ScriptedProvider([("", "v")])
    c = CachedProvider(inner, tmp_path)
    c.complete(req())
    path = c.path_for(req())
    path.write_text("{not json")
    assert c.complete(req()).text == "v"
    assert inner.upstream_calls == 2
    assert json.loads(path.read_text())["text"] == "v"


def test_cache_key_includes_provider():
    assert cache_key("a", req()) != cache_key("b", req())


def test_usage_report():
    recs = [{"tokens": {"input": 60, "output": 40, "total": 100, "per_phase": {"direct": 100}}},
            {"tokens": {"input": 200, "output": 100, "total": 300, "per_phase": {"direct": 300}}}]
    rep = usage_report(recs)
    assert rep["per_instance_mean_tokens"] == 200
    assert rep["per_phase"] == {"direct": 400}
    empty = usage_report([])
    assert empty["per_instance_mean_tokens"] == 0.0 and empty["totals"]["total"] == 0


def _openai(handler, monkeypatch, **kw):
    monkeypatch.setenv("COPKIT_API_KEY_TEST", "secret")
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return OpenAICompatibleProvider("test", "m1", base_url="http://x/v1", client=client, sleep=lambda s: None, **kw)


def test_openai_success(monkeypatch, tmp_path):
    (tmp_path / "img1.png").write_bytes(b"\x89PNG")
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "step_1: go"}, "finish_reason": "stop"}],
                                         "usage": {"prompt_tokens": 11, "completion_tokens": 3}})

    p = _openai(handler, monkeypatch, image_root=tmp_path)
    r = p.complete(req("hi", ["img1"]))
    assert r.text == "step_1: go" and r.usage == Usage(11, 3)
    assert seen["auth"] == "Bearer secret"
    parts = seen["body"]["messages"][0]["content"]
    assert parts[0]["image_url"]["url"].startswith("data:image/png;base64,")
    assert seen["body"]["temperature"] == 0.0


def test_openai_retries_on_429(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 2:
            return httpx.Response(429, text="slow down")
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    assert _openai(handler, monkeypatch).complete(req()).text == "ok"
    assert len(calls) == 2


def test_openai_refusal(monkeypatch):
    def handler(request):
        return httpx.Response(200, json={"choices": [{"message": {"content": None}, "finish_reason": "content_filter"}]})

    with pytest.raises(ProviderRefusal):
        _openai(handler, monkeypatch).complete(req())
    with pytest.raises(ProviderRefusal):
        _openai(lambda r: httpx.Response(400, text="bad"), monkeypatch).complete(req())
