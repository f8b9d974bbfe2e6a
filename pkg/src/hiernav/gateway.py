"""Chat-completion endpoint driver with caching and scripted stand-ins.

Three layers: a thin HTTPS client with retry/backoff, a content-addressed
on-disk response cache with per-key single-flight locking, and in-process
scripted models that answer deterministically for tests and offline runs.
A "completer" is anything exposing ``complete(endpoint, prompt, sampling)``;
the client and scripted models are interchangeable behind that shape.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

import httpx
from filelock import FileLock

from .lineio import iter_records
from .prompts import PromptTemplate

RUNS_PER_QUESTION = 3

DEFAULT_TEMPERATURE = 0.8
DEFAULT_TOP_P = 0.7

# Response-length envelopes per template; flagged in report metadata since
# they are configuration, not protocol.
DEFAULT_MAX_TOKENS: dict[PromptTemplate, int] = {
    PromptTemplate.DIRECT_QA: 16,
    PromptTemplate.CHAIN_OF_THOUGHT: 1024,
    PromptTemplate.STRUCTURED: 1024,
    PromptTemplate.NCA_PATH: 512,
}


class GatewayError(Exception):
    pass


class AuthError(GatewayError):
    def __init__(self, endpoint_id: str, auth_ref: str):
        self.endpoint_id = endpoint_id
        self.auth_ref = auth_ref
        super().__init__(
            f"endpoint {endpoint_id!r}: credential variable {auth_ref!r} is unset"
        )


class RateLimited(GatewayError):
    def __init__(self, retry_after: float | None):
        self.retry_after = retry_after
        super().__init__(f"rate limited (retry-after: {retry_after})")


class EndpointError(GatewayError):
    def __init__(self, status: int, excerpt: str):
        self.status = status
        self.excerpt = excerpt
        super().__init__(f"endpoint returned {status}: {excerpt[:200]}")


class Timeout(GatewayError):
    pass


class CacheCorrupt(GatewayError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"cache entry {key} unreadable")


@dataclass(frozen=True)
class ModelEndpoint:
    id: str
    base_url: str
    model_name: str
    auth_ref: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("endpoint id must be nonempty")


def load_endpoints(path: str | Path) -> list[ModelEndpoint]:
    """Read an endpoint roster, one record per line."""
    roster = []
    seen: set[str] = set()
    for lineno, record in iter_records(path):
        endpoint = ModelEndpoint(
            id=str(record["id"]),
            base_url=str(record["base_url"]),
            model_name=str(record["model_name"]),
            auth_ref=record.get("auth_ref"),
        )
        if endpoint.id in seen:
            raise ValueError(f"line {lineno}: duplicate endpoint id {endpoint.id!r}")
        seen.add(endpoint.id)
        roster.append(endpoint)
    return roster


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    max_tokens: int = 1024
    run_index: int = 0
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.run_index < RUNS_PER_QUESTION:
            raise ValueError(f"run_index must be in [0, 3), got {self.run_index}")

    @property
    def request_seed(self) -> int | None:
        # Distinct per run so endpoints honoring seeds still vary across the
        # three runs.
        return None if self.seed is None else self.seed + self.run_index


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: float
    from_cache: bool = False
    retries: int = 0


class Completer(Protocol):
    def complete(
        self, endpoint: ModelEndpoint, prompt: str, sampling: SamplingConfig
    ) -> Completion: ...


class ChatCompletionsClient:
    """Minimal chat-completions client with exponential-backoff retry.

    `transport` and `sleeper` exist for tests: a mock transport injects
    failures and a no-op sleeper keeps retry tests instant.
    """

    def __init__(
        self,
        transport: httpx.BaseTransport | None = None,
        max_retries: int = 4,
        backoff_base: float = 0.25,
        request_timeout: float = 120.0,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self._client = httpx.Client(transport=transport, timeout=request_timeout)
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.sleeper = sleeper

    def close(self) -> None:
        self._client.close()

    def _headers(self, endpoint: ModelEndpoint) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if endpoint.auth_ref:
            token = os.environ.get(endpoint.auth_ref)
            if not token:
                raise AuthError(endpoint.id, endpoint.auth_ref)
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(
        self, endpoint: ModelEndpoint, prompt: str, sampling: SamplingConfig
    ) -> Completion:
        headers = self._headers(endpoint)  # fails before any network use
        body: dict[str, Any] = {
            "model": endpoint.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_tokens": sampling.max_tokens,
        }
        if sampling.request_seed is not None:
            body["seed"] = sampling.request_seed
        url = endpoint.base_url.rstrip("/") + "/chat/completions"

        last_error: GatewayError | None = None
        started = time.monotonic()
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.sleeper(self._delay(attempt, last_error))
            try:
                response = self._client.post(url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last_error = Timeout(f"endpoint {endpoint.id!r}: {exc}")
                continue
            except httpx.TransportError as exc:
                last_error = EndpointError(0, str(exc))
                continue
            if response.status_code == 429:
                last_error = RateLimited(_retry_after(response))
                continue
            if response.status_code >= 500:
                last_error = EndpointError(response.status_code, response.text)
                continue
            if response.status_code != 200:
                raise EndpointError(response.status_code, response.text)
            return self._parse(response, started, retries=attempt)
        assert last_error is not None
        raise last_error

    def _delay(self, attempt: int, last_error: GatewayError | None) -> float:
        if isinstance(last_error, RateLimited) and last_error.retry_after is not None:
            return last_error.retry_after
        return self.backoff_base * (2 ** (attempt - 1))

    @staticmethod
    def _parse(response: httpx.Response, started: float, retries: int) -> Completion:
        try:
            payload = response.json()
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise EndpointError(response.status_code, response.text) from exc
        usage = payload.get("usage") or {}
        return Completion(
            text=text if text is not None else "",
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency_ms=(time.monotonic() - started) * 1000.0,
            retries=retries,
        )


def _retry_after(response: httpx.Response) -> float | None:
    value = response.headers.get("Retry-After")
    if value is None:
        return None
    try:
        return float(value)
    except ValueError:
        return None


ScriptValue = str | Sequence[str] | Callable[[str, SamplingConfig], str]


class ScriptedModel:
    """Deterministic completer driven by substring-matching rules.

    Rules are checked in order; the first whose pattern occurs in the prompt
    wins. A rule value may be a single text, one text per run index, or a
    callable of (prompt, sampling). Unmatched prompts get `default`.
    """

    def __init__(
        self,
        rules: Sequence[tuple[str, ScriptValue]] | Mapping[str, ScriptValue],
        default: str = "",
        endpoint_id: str = "scripted",
        model_name: str = "scripted",
    ):
        items = list(rules.items()) if isinstance(rules, Mapping) else list(rules)
        if not items:
            raise ValueError("script must contain at least one rule")
        self.rules = items
        self.default = default
        self.endpoint_id = endpoint_id
        self.model_name = model_name
        self._lock = threading.Lock()
        self.calls = 0

    def as_endpoint(self) -> ModelEndpoint:
        return ModelEndpoint(
            id=self.endpoint_id, base_url="scripted:", model_name=self.model_name
        )

    def _respond(self, prompt: str, sampling: SamplingConfig) -> str:
        for pattern, value in self.rules:
            if pattern in prompt:
                if callable(value):
                    return value(prompt, sampling)
                if isinstance(value, str):
                    return value
                return value[sampling.run_index]
        return self.default

    def complete(
        self, endpoint: ModelEndpoint, prompt: str, sampling: SamplingConfig
    ) -> Completion:
        with self._lock:
            self.calls += 1
        text = self._respond(prompt, sampling)
        return Completion(
            text=text,
            prompt_tokens=len(prompt.split()),
            completion_tokens=len(text.split()),
            latency_ms=0.0,
        )


def cache_key(
    endpoint: ModelEndpoint, prompt: str, sampling: SamplingConfig
) -> str:
    """Digest over everything that can change a completion."""
    material = json.dumps(
        {
            "endpoint": endpoint.id,
            "model": endpoint.model_name,
            "prompt": prompt,
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_tokens": sampling.max_tokens,
            "run_index": sampling.run_index,
            "seed": sampling.seed,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per key under `root`; writes are atomic."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def lock(self, key: str) -> FileLock:
        return FileLock(self.root / f"{key}.lock")

    def get(self, key: str) -> Completion | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
            stored = payload["completion"]
            return Completion(
                text=stored["text"],
                prompt_tokens=int(stored["prompt_tokens"]),
                completion_tokens=int(stored["completion_tokens"]),
                latency_ms=float(stored["latency_ms"]),
                from_cache=True,
                retries=int(stored.get("retries", 0)),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CacheCorrupt(key) from exc

    def put(
        self,
        key: str,
        request: Mapping[str, Any],
        completion: Completion,
    ) -> None:
        payload = {
            "request": dict(request),
            "completion": {
                "text": completion.text,
                "prompt_tokens": completion.prompt_tokens,
                "completion_tokens": completion.completion_tokens,
                "latency_ms": completion.latency_ms,
                "retries": completion.retries,
            },
        }
        tmp = self._path(key).with_suffix(".tmp")
        tmp.write_text(
            json.dumps(payload, sort_keys=True, ensure_ascii=False), encoding="utf-8"
        )
        os.replace(tmp, self._path(key))

    def quarantine(self, key: str) -> None:
        path = self._path(key)
        if path.exists():
            os.replace(path, path.with_suffix(".corrupt"))


def cached_complete(
    completer: Completer,
    endpoint: ModelEndpoint,
    prompt: str,
    sampling: SamplingConfig,
    cache: ResponseCache,
) -> Completion:
    """Serve from the cache when possible; single live call per key.

    The per-key lock means concurrent misses on the same key collapse into
    one upstream request; corrupt entries are quarantined and refetched.
    """
    key = cache_key(endpoint, prompt, sampling)

    def read() -> Completion | None:
        try:
            return cache.get(key)
        except CacheCorrupt:
            cache.quarantine(key)
            return None

    hit = read()
    if hit is not None:
        return hit
    with cache.lock(key):
        hit = read()
        if hit is not None:
            return hit
        completion = completer.complete(endpoint, prompt, sampling)
        cache.put(
            key,
            request={
                "endpoint": endpoint.id,
                "model": endpoint.model_name,
                "prompt": prompt,
                "temperature": sampling.temperature,
                "top_p": sampling.top_p,
                "max_tokens": sampling.max_tokens,
                "run_index": sampling.run_index,
                "seed": sampling.seed,
            },
            completion=completion,
        )
        return completion
