"""Canonical requests, cache contract, replay, registry, and the wire client."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from genselect.backend import (
    BackendError,
    BackendRegistry,
    CompletionCache,
    CompletionClient,
    CompletionRecord,
    CompletionRequest,
    DuplicateBackendError,
    HTTPBackend,
    MalformedResponseError,
    MissingSecretError,
    ReplayBackend,
    ReplayMissError,
    TransportError,
    write_replay_fixture,
)


def _request(prompt="Question: q?\nAnswer:", temperature=0.001, max_tokens=15, stop=("\n",)):
    return CompletionRequest(
        model_id="m1", prompt=prompt, temperature=temperature, max_tokens=max_tokens, stop=stop
    )


def _record(request, completion="office", backend="b", version="v1", ts=1.5):
    return CompletionRecord(
        request=request,
        completion=completion,
        backend_name=backend,
        template_version=version,
        timestamp=ts,
        cache_key=request.cache_key(),
    )


def test_canonical_json_sorted_and_compact():
    req = _request()
    obj = json.loads(req.canonical_json())
    assert list(json.loads(req.canonical_json())) == sorted(obj)
    assert req.canonical_json() == req.canonical_json()


def test_stop_none_and_empty_unify():
    with_none = CompletionRequest("m", "p", 0.001, 15, stop=None)
    with_empty = CompletionRequest("m", "p", 0.001, 15, stop=())
    assert with_none == with_empty
    assert with_none.cache_key() == with_empty.cache_key()
    assert "stop" not in json.loads(with_none.canonical_json())


def test_request_validation():
    with pytest.raises(ValueError):
        CompletionRequest("m", "p", -0.1, 15)
    with pytest.raises(ValueError):
        CompletionRequest("m", "p", 0.5, 0)


def test_request_json_round_trip():
    req = _request(prompt="x\ny", temperature=0.7, max_tokens=80, stop=None)
    assert CompletionRequest.from_json_obj(req.to_json_obj()) == req


request_strategy = st.builds(
    CompletionRequest,
    model_id=st.sampled_from(["m1", "m2"]),
    prompt=st.text(max_size=30),
    temperature=st.sampled_from([0.001, 0.7, 1.0]),
    max_tokens=st.integers(min_value=1, max_value=100),
    stop=st.one_of(st.none(), st.lists(st.sampled_from(["\n", "###"]), max_size=2).map(tuple)),
)


@given(request_strategy, request_strategy)
@settings(max_examples=200, deadline=None)
def test_digest_injective_over_request_tuples(a, b):
    if a.cache_key() == b.cache_key():
        assert a == b


def test_cache_put_get_reload(tmp_path):
    path = tmp_path / "cache.jsonl"
    cache = CompletionCache(path)
    record = _record(_request(), completion="tie\nwith newline and unicode é")
    cache.put(record)
    assert cache.get(record.cache_key) == record
    reloaded = CompletionCache(path)
    assert reloaded.get(record.cache_key).completion == record.completion
    assert reloaded.get(record.cache_key) == record


def test_cache_file_round_trips_byte_exactly(tmp_path):
    path = tmp_path / "cache.jsonl"
    cache = CompletionCache(path)
    for i in range(3):
        cache.put(_record(_request(prompt=f"p{i}"), completion=f"c{i} é", ts=float(i)))
    original = path.read_bytes()
    reloaded = CompletionCache(path)
    rewritten = tmp_path / "rewritten.jsonl"
    out = CompletionCache(rewritten)
    for key in sorted(reloaded.keys(), key=lambda k: reloaded.get(k).timestamp):
        out.put(reloaded.get(key))
    assert rewritten.read_bytes() == original


def test_cache_append_only_last_wins(tmp_path):
    path = tmp_path / "cache.jsonl"
    cache = CompletionCache(path)
    req = _request()
    cache.put(_record(req, completion="first"))
    cache.put(_record(req, completion="second"))
    assert len(path.read_text().splitlines()) == 2
    assert CompletionCache(path).get(req.cache_key()).completion == "second"


def test_cache_verify_detects_tamper(tmp_path):
    path = tmp_path / "cache.jsonl"
    cache = CompletionCache(path)
    record = _record(_request())
    cache.put(record)
    tampered = record.to_json_obj()
    tampered["request"]["prompt"] = "changed"
    path.write_text(json.dumps(tampered) + "\n", encoding="utf-8")
    assert CompletionCache(path).verify() == [record.cache_key]
    assert cache.verify() == []


def test_replay_backend_serves_fixture(tmp_path):
    req = _request(prompt="p")
    fixture = tmp_path / "fixture.jsonl"
    write_replay_fixture(fixture, {req.cache_key(): "office or school"})
    backend = ReplayBackend("replay", fixture)
    assert backend.send(req) == "office or school"
    assert backend.calls == 1
    with pytest.raises(ReplayMissError):
        backend.send(_request(prompt="unknown"))


def test_registry_duplicate_name(tmp_path):
    fixture = tmp_path / "f.jsonl"
    write_replay_fixture(fixture, {})
    registry = BackendRegistry()
    registry.register_replay("codex", fixture)
    with pytest.raises(DuplicateBackendError):
        registry.register_replay("codex", fixture)


def test_registry_order_and_lookup(tmp_path):
    fixture = tmp_path / "f.jsonl"
    write_replay_fixture(fixture, {})
    registry = BackendRegistry()
    for name in ("gptj", "ul2", "opt", "codex"):
        registry.register_replay(name, fixture)
    assert registry.names() == ["gptj", "ul2", "opt", "codex"]
    assert [b.name for b in registry] == ["gptj", "ul2", "opt", "codex"]
    with pytest.raises(BackendError, match="unknown backend"):
        registry.get("gpt3")


def test_registry_http_env_resolution(monkeypatch):
    monkeypatch.setenv("RASO_BACKEND_CODEX_URL", "http://localhost:1/v1")
    monkeypatch.setenv("RASO_BACKEND_CODEX_KEY", "sk-test")
    registry = BackendRegistry()
    backend = registry.register_http("codex", model_id="code-davinci-002")
    assert backend.url == "http://localhost:1/v1"
    assert backend._api_key == "sk-test"
    assert backend.model_id == "code-davinci-002"


def test_registry_http_missing_url(monkeypatch):
    monkeypatch.delenv("RASO_BACKEND_OPT_URL", raising=False)
    registry = BackendRegistry()
    with pytest.raises(MissingSecretError, match="RASO_BACKEND_OPT_URL"):
        registry.register_http("opt")


def test_registry_http_missing_explicit_secret(monkeypatch):
    monkeypatch.delenv("MY_SECRET", raising=False)
    registry = BackendRegistry()
    with pytest.raises(MissingSecretError, match="MY_SECRET"):
        registry.register_http("opt", url="http://localhost:1", key_env="MY_SECRET")


class FakeResponse:
    def __init__(self, status_code=200, body=None, invalid=False):
        self.status_code = status_code
        self._body = body
        self._invalid = invalid

    def json(self):
        if self._invalid:
            raise ValueError("not json")
        return self._body


class FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.posts = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.posts.append({"url": url, "json": json, "headers": headers})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def test_http_backend_success_payload():
    session = FakeSession([FakeResponse(200, {"text": "office"})])
    backend = HTTPBackend("b", url="http://x/complete", api_key="k", session=session, backoff=0)
    assert backend.send(_request()) == "office"
    post = session.posts[0]
    assert post["json"] == {
        "model": "m1",
        "prompt": "Question: q?\nAnswer:",
        "temperature": 0.001,
        "max_tokens": 15,
        "stop": ["\n"],
    }
    assert post["headers"]["Authorization"] == "Bearer k"


def test_http_backend_retries_rate_limit_then_succeeds():
    session = FakeSession([FakeResponse(429), FakeResponse(200, {"text": "x"})])
    backend = HTTPBackend("b", url="http://x", session=session, backoff=0)
    assert backend.send(_request()) == "x"
    assert backend.calls == 2


def test_http_backend_transport_error_after_attempts():
    session = FakeSession([requests.ConnectionError("refused")] * 3)
    backend = HTTPBackend("b", url="http://x", session=session, backoff=0)
    with pytest.raises(TransportError, match="after 3 attempts"):
        backend.send(_request())
    assert backend.calls == 3


def test_http_backend_client_error_fails_fast():
    session = FakeSession([FakeResponse(404)])
    backend = HTTPBackend("b", url="http://x", session=session, backoff=0)
    with pytest.raises(TransportError, match="HTTP 404"):
        backend.send(_request())
    assert backend.calls == 1


def test_http_backend_malformed_body():
    session = FakeSession([FakeResponse(200, {"wrong": 1})])
    backend = HTTPBackend("b", url="http://x", session=session, backoff=0)
    with pytest.raises(MalformedResponseError):
        backend.send(_request())


def test_client_cache_short_circuits_wire(tmp_path):
    session = FakeSession([FakeResponse(200, {"text": "first"})])
    backend = HTTPBackend("b", url="http://x", session=session, backoff=0)
    client = CompletionClient(backend, CompletionCache(tmp_path / "c.jsonl"))
    req = _request()
    record = client.complete(req, template_version="v1")
    assert record.completion == "first"
    assert record.template_version == "v1"
    again = client.complete(req)
    assert again == record
    assert backend.calls == 1
    assert client.requests_made == 2


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        body = json.dumps({"text": f"echo:{payload['prompt']}"}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


def test_http_backend_against_live_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        backend = HTTPBackend("live", url=f"http://127.0.0.1:{server.server_port}/", timeout=5)
        assert backend.send(_request(prompt="ping")) == "echo:ping"
    finally:
        server.shutdown()
