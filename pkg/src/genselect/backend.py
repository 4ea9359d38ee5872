"""Completion backends: HTTP wire client, deterministic replay, response cache.

All backends speak one internal protocol: POST a JSON body
{"model", "prompt", "temperature", "max_tokens", "stop"?} and read back
{"text": str}. Thin adapters can map this onto vendor APIs. Every
completed request is persisted append-only, keyed by the SHA-256 of its
canonical serialization, so a warmed cache replays a whole run with zero
wire calls.

HTTP endpoints and keys come from the environment:
RASO_BACKEND_<NAME>_URL and RASO_BACKEND_<NAME>_KEY.
"""

from __future__ import annotations

import json
import hashlib
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import requests

logger = logging.getLogger(__name__)

ENV_URL_TEMPLATE = "RASO_BACKEND_{name}_URL"
ENV_KEY_TEMPLATE = "RASO_BACKEND_{name}_KEY"

DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_TIMEOUT = 60.0
DEFAULT_BACKOFF = 0.5


class BackendError(Exception):
    """Base for completion-backend failures."""


class TransportError(BackendError):
    """Wire-level failure after bounded retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt{'s' if attempts != 1 else ''})")
        self.attempts = attempts


class MalformedResponseError(BackendError):
    """The endpoint answered, but not with the expected JSON body."""


class ReplayMissError(BackendError):
    """The replay fixture has no completion for this request digest."""


class DuplicateBackendError(BackendError):
    """A backend with this name is already registered."""


class MissingSecretError(BackendError):
    """A declared secret reference could not be resolved from the environment."""


@dataclass(frozen=True)
class CompletionRequest:
    """Canonical completion request; its digest is the cache key."""

    model_id: str
    prompt: str
    temperature: float
    max_tokens: int
    stop: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        stop = tuple(self.stop) if self.stop else None
        object.__setattr__(self, "stop", stop)

    def to_json_obj(self) -> dict:
        obj = {
            "model_id": self.model_id,
            "prompt": self.prompt,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.stop is not None:
            obj["stop"] = list(self.stop)
        return obj

    def canonical_json(self) -> str:
        """Stable serialization: sorted keys, exact float text, no padding."""
        return json.dumps(self.to_json_obj(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    def cache_key(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    @staticmethod
    def from_json_obj(obj: Mapping) -> "CompletionRequest":
        stop = obj.get("stop")
        return CompletionRequest(
            model_id=obj["model_id"],
            prompt=obj["prompt"],
            temperature=float(obj["temperature"]),
            max_tokens=int(obj["max_tokens"]),
            stop=tuple(stop) if stop else None,
        )


@dataclass(frozen=True)
class CompletionRecord:
    """One backend call: canonical request, raw completion, provenance."""

    request: CompletionRequest
    completion: str
    backend_name: str
    template_version: str
    timestamp: float
    cache_key: str

    def to_json_obj(self) -> dict:
        return {
            "request": self.request.to_json_obj(),
            "completion": self.completion,
            "backend_name": self.backend_name,
            "template_version": self.template_version,
            "timestamp": self.timestamp,
            "cache_key": self.cache_key,
        }

    @staticmethod
    def from_json_obj(obj: Mapping) -> "CompletionRecord":
        return CompletionRecord(
            request=CompletionRequest.from_json_obj(obj["request"]),
            completion=obj["completion"],
            backend_name=obj["backend_name"],
            template_version=obj["template_version"],
            timestamp=float(obj["timestamp"]),
            cache_key=obj["cache_key"],
        )


class CompletionCache:
    """Append-only JSONL record store with an in-memory key index.

    Duplicate keys resolve to the last-written record. Appends are
    serialized through one lock; lookups read the in-memory index.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._index: dict[str, CompletionRecord] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        record = CompletionRecord.from_json_obj(json.loads(line))
                    except (json.JSONDecodeError, KeyError) as exc:
                        raise BackendError(f"{self.path}, line {line_no}: corrupt cache record ({exc})") from exc
                    self._index[record.cache_key] = record

    def get(self, key: str) -> CompletionRecord | None:
        return self._index.get(key)

    def put(self, record: CompletionRecord) -> None:
        line = json.dumps(record.to_json_obj(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
            self._index[record.cache_key] = record

    def keys(self) -> set[str]:
        return set(self._index)

    def verify(self) -> list[str]:
        """Keys whose stored digest does not match their canonical request."""
        return [
            key
            for key, record in self._index.items()
            if record.request.cache_key() != key
        ]

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key: str) -> bool:
        return key in self._index


class CompletionBackend:
    """A frozen completion model behind a uniform send() call."""

    def __init__(self, name: str, model_id: str | None = None):
        self.name = name
        self.model_id = model_id or name
        self.calls = 0  # send() invocations that reached the transport

    def send(self, request: CompletionRequest) -> str:
        raise NotImplementedError


class HTTPBackend(CompletionBackend):
    """Internal-protocol HTTP client with bounded retries and backoff."""

    def __init__(
        self,
        name: str,
        url: str,
        api_key: str | None = None,
        model_id: str | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        backoff: float = DEFAULT_BACKOFF,
        session: requests.Session | None = None,
    ):
        super().__init__(name, model_id)
        self.url = url
        self._api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._session = session or requests.Session()

    def _payload(self, request: CompletionRequest) -> dict:
        payload = {
            "model": request.model_id,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.stop is not None:
            payload["stop"] = list(request.stop)
        return payload

    def send(self, request: CompletionRequest) -> str:
        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        last_error = ""
        for attempt in range(1, self.max_attempts + 1):
            self.calls += 1
            if attempt > 1:
                time.sleep(self.backoff * 2 ** (attempt - 2))
            try:
                response = self._session.post(
                    self.url,
                    json=self._payload(request),
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = f"transport failure: {exc}"
                logger.warning("backend %s attempt %d/%d: %s", self.name, attempt, self.max_attempts, last_error)
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                logger.warning("backend %s attempt %d/%d: %s", self.name, attempt, self.max_attempts, last_error)
                continue
            if response.status_code != 200:
                raise TransportError(f"backend {self.name}: HTTP {response.status_code}", attempt)
            try:
                body = response.json()
            except ValueError as exc:
                raise MalformedResponseError(f"backend {self.name}: response is not JSON ({exc})") from exc
            if not isinstance(body, dict) or not isinstance(body.get("text"), str):
                raise MalformedResponseError(f"backend {self.name}: response body missing text field")
            return body["text"]
        raise TransportError(f"backend {self.name}: {last_error}", self.max_attempts)


class ReplayBackend(CompletionBackend):
    """Serves recorded completions by request digest; never touches the network."""

    def __init__(self, name: str, fixture_path: str | Path, model_id: str | None = None):
        super().__init__(name, model_id)
        self.fixture_path = Path(fixture_path)
        self._completions: dict[str, str] = {}
        with open(self.fixture_path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                self._completions[obj["cache_key"]] = obj["completion"]

    def send(self, request: CompletionRequest) -> str:
        self.calls += 1
        key = request.cache_key()
        if key not in self._completions:
            raise ReplayMissError(
                f"backend {self.name}: no fixture completion for digest {key[:12]}… "
                f"(model {request.model_id!r}, prompt head {request.prompt[:60]!r})"
            )
        return self._completions[key]


def write_replay_fixture(path: str | Path, entries: Mapping[str, str]) -> None:
    """Write a digest -> completion mapping in the replay fixture format."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(entries):
            fh.write(json.dumps({"cache_key": key, "completion": entries[key]}, ensure_ascii=False) + "\n")


def _env_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]", "_", name).upper()


class BackendRegistry:
    """Named backends in registration order."""

    def __init__(self):
        self._backends: dict[str, CompletionBackend] = {}

    def register(self, backend: CompletionBackend) -> CompletionBackend:
        if backend.name in self._backends:
            raise DuplicateBackendError(f"backend {backend.name!r} is already registered")
        self._backends[backend.name] = backend
        return backend

    def register_http(
        self,
        name: str,
        url: str | None = None,
        key_env: str | None = None,
        model_id: str | None = None,
        **kwargs,
    ) -> HTTPBackend:
        """Register an HTTP backend, resolving endpoint and key from the environment.

        An explicitly named key_env must resolve; the default env var is
        optional so keyless local endpoints work.
        """
        env = _env_name(name)
        if url is None:
            url_var = ENV_URL_TEMPLATE.format(name=env)
            url = os.environ.get(url_var)
            if not url:
                raise MissingSecretError(f"backend {name!r}: no url given and {url_var} is unset")
        if key_env is not None:
            api_key = os.environ.get(key_env)
            if not api_key:
                raise MissingSecretError(f"backend {name!r}: secret {key_env} is unset")
        else:
            api_key = os.environ.get(ENV_KEY_TEMPLATE.format(name=env))
        backend = HTTPBackend(name, url=url, api_key=api_key, model_id=model_id, **kwargs)
        self.register(backend)
        return backend

    def register_replay(self, name: str, fixture_path: str | Path, model_id: str | None = None) -> ReplayBackend:
        backend = ReplayBackend(name, fixture_path, model_id=model_id)
        self.register(backend)
        return backend

    def get(self, name: str) -> CompletionBackend:
        if name not in self._backends:
            raise BackendError(f"unknown backend {name!r} (registered: {sorted(self._backends)})")
        return self._backends[name]

    def names(self) -> list[str]:
        return list(self._backends)

    def __iter__(self) -> Iterator[CompletionBackend]:
        return iter(self._backends.values())

    def __len__(self) -> int:
        return len(self._backends)


@dataclass
class CompletionClient:
    """Cache-through completion calls against one backend."""

    backend: CompletionBackend
    cache: CompletionCache
    requests_made: int = field(default=0)

    def complete(self, request: CompletionRequest, template_version: str = "") -> CompletionRecord:
        """Serve from cache when possible, else one wire call, persisted."""
        self.requests_made += 1
        key = request.cache_key()
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        completion = self.backend.send(request)
        record = CompletionRecord(
            request=request,
            completion=completion,
            backend_name=self.backend.name,
            template_version=template_version,
            timestamp=time.time(),
            cache_key=key,
        )
        self.cache.put(record)
        return record
