"""Uniform text-generation interface over interchangeable backends.

Backends:
- ``http``   — any OpenAI-compatible /v1/chat/completions server, with
               retry, backoff and token-bucket rate limiting
- ``mock``   — deterministic scripted responses keyed by request tag,
               with an optional fallback for unscripted tags
- ``replay`` — byte-exact playback of a recorded cassette file

A :class:`Gateway` wraps one backend and adds call counting, optional
cassette recording, and order-preserving parallel dispatch.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import requests


class GatewayError(Exception):
    """Base class for generation-backend failures."""


class BackendUnavailable(GatewayError):
    """Transport failure or retryable status after retries were exhausted."""


class AuthError(GatewayError):
    """401/403 from the server; never retried."""


class ReplayMiss(GatewayError):
    """Replay backend has no cassette entry for the request tag."""


class DuplicateTag(GatewayError):
    """A request_tag was recorded twice in the same cassette."""


def count_tokens(text: str, tokenizer: Callable[[str], list[str]] | None = None) -> int:
    """Token count of ``text``; whitespace words unless a tokenizer is given."""
    if tokenizer is not None:
        return len(tokenizer(text))
    return len(text.split())


def truncate_tokens(text: str, max_tokens: int) -> str:
    """First ``max_tokens`` whitespace tokens, re-joined with single spaces."""
    words = text.split()
    if len(words) <= max_tokens:
        return " ".join(words)
    return " ".join(words[:max_tokens])


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    request_tag: str
    max_new_tokens: int = 256
    min_new_tokens: int = 0
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")
        if not 0 <= self.min_new_tokens <= self.max_new_tokens:
            raise ValueError("min_new_tokens must be in [0, max_new_tokens]")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "request_tag": self.request_tag,
            "max_new_tokens": self.max_new_tokens,
            "min_new_tokens": self.min_new_tokens,
            "temperature": self.temperature,
            "stop_sequences": list(self.stop_sequences),
        }


@dataclass
class GenerationResult:
    text: str  # raw model output, untruncated and unpostprocessed
    prompt_tokens: int = 0
    completion_tokens: int = 0
    backend_id: str = ""
    latency_ms: int = 0

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "backend_id": self.backend_id,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationResult":
        return cls(
            text=data["text"],
            prompt_tokens=data.get("prompt_tokens", 0),
            completion_tokens=data.get("completion_tokens", 0),
            backend_id=data.get("backend_id", ""),
            latency_ms=data.get("latency_ms", 0),
        )


@dataclass
class BackendConfig:
    kind: str = "mock"  # http | mock | replay
    base_url: str | None = None
    model_name: str | None = None
    api_key_env: str | None = None
    timeout_ms: int = 60_000
    max_retries: int = 3
    parallelism: int = 1
    requests_per_second: float = 0.0  # 0 disables rate limiting
    retry_base_ms: int = 500
    mock_script: dict[str, str] | None = None
    cassette_path: str | None = None  # replay source

    def __post_init__(self) -> None:
        if self.kind not in ("http", "mock", "replay"):
            raise ValueError(f"unknown backend kind: {self.kind!r}")
        if self.kind == "http" and not (self.base_url and self.model_name):
            raise ValueError("http backend requires base_url and model_name")
        if self.kind == "replay" and not self.cassette_path:
            raise ValueError("replay backend requires cassette_path")
        if self.timeout_ms < 1:
            raise ValueError("timeout_ms must be positive")
        if self.parallelism < 1:
            raise ValueError("parallelism must be positive")

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "timeout_ms": self.timeout_ms,
            "max_retries": self.max_retries,
            "parallelism": self.parallelism,
            "requests_per_second": self.requests_per_second,
            "retry_base_ms": self.retry_base_ms,
        }
        for key in ("base_url", "model_name", "api_key_env", "cassette_path"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        if self.mock_script:
            out["mock_script"] = dict(self.mock_script)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BackendConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


class _TokenBucket:
    """Paces requests to a steady rate; acquire() blocks until a slot frees."""

    def __init__(self, rate_per_second: float) -> None:
        self.rate = rate_per_second
        self.capacity = 1.0  # no bursts: strict interval pacing
        self.tokens = self.capacity
        self.updated = time.monotonic()
        self.lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self.lock:
                now = time.monotonic()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            time.sleep(wait)


class MockBackend:
    """Scripted responses keyed by request_tag.

    Unscripted tags go to ``fallback`` when provided (the fallback must be
    a pure function of the request so replays stay deterministic).
    """

    def __init__(
        self,
        script: dict[str, str] | None = None,
        fallback: Callable[[GenerationRequest], str] | None = None,
        backend_id: str = "mock",
    ) -> None:
        self.script = dict(script or {})
        self.fallback = fallback
        self.backend_id = backend_id

    def complete(self, request: GenerationRequest) -> GenerationResult:
        if request.request_tag in self.script:
            text = self.script[request.request_tag]
        elif self.fallback is not None:
            text = self.fallback(request)
        else:
            raise ReplayMiss(f"mock has no scripted response for tag {request.request_tag!r}")
        return GenerationResult(
            text=text,
            prompt_tokens=count_tokens(request.prompt),
            completion_tokens=count_tokens(text),
            backend_id=self.backend_id,
            latency_ms=0,
        )


class ReplayBackend:
    """Plays back a cassette recorded by a previous run."""

    def __init__(self, cassette_path: str | Path, backend_id: str = "replay") -> None:
        self.entries = load_cassette(cassette_path)
        self.backend_id = backend_id

    def complete(self, request: GenerationRequest) -> GenerationResult:
        entry = self.entries.get(request.request_tag)
        if entry is None:
            raise ReplayMiss(f"cassette has no entry for tag {request.request_tag!r}")
        return GenerationResult.from_dict(entry["result"])


class HttpBackend:
    """OpenAI-compatible chat completions over HTTP."""

    RETRYABLE_STATUSES = (429, 500, 502, 503, 504)

    def __init__(self, config: BackendConfig, session: requests.Session | None = None) -> None:
        self.config = config
        self.session = session or requests.Session()
        self.backend_id = f"http:{config.model_name}"
        self._bucket = (
            _TokenBucket(config.requests_per_second) if config.requests_per_second > 0 else None
        )
        # Jitter uses its own RNG so retries never disturb run-level seeding.
        self._jitter = random.Random()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(self, request: GenerationRequest) -> dict:
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        return payload

    def complete(self, request: GenerationRequest) -> GenerationResult:
        url = self.config.base_url.rstrip("/") + "/v1/chat/completions"
        timeout = self.config.timeout_ms / 1000.0
        last_error: str = "no attempts made"
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                backoff = self.config.retry_base_ms / 1000.0 * (2 ** (attempt - 1))
                time.sleep(backoff + self._jitter.uniform(0, backoff / 2))
            if self._bucket is not None:
                self._bucket.acquire()
            started = time.monotonic()
            try:
                response = self.session.post(
                    url, json=self._payload(request), headers=self._headers(), timeout=timeout
                )
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code in (401, 403):
                raise AuthError(f"authentication failed ({response.status_code}) at {url}")
            if response.status_code in self.RETRYABLE_STATUSES:
                last_error = f"status {response.status_code}"
                continue
            if response.status_code != 200:
                raise BackendUnavailable(
                    f"unexpected status {response.status_code} from {url}: {response.text[:200]}"
                )
            body = response.json()
            text = body["choices"][0]["message"]["content"]
            usage = body.get("usage", {})
            return GenerationResult(
                text=text,
                prompt_tokens=usage.get("prompt_tokens", count_tokens(request.prompt)),
                completion_tokens=usage.get("completion_tokens", count_tokens(text)),
                backend_id=self.backend_id,
                latency_ms=int((time.monotonic() - started) * 1000),
            )
        raise BackendUnavailable(
            f"{url} unavailable after {self.config.max_retries + 1} attempts ({last_error})"
        )


class CassetteRecorder:
    """Appends (request, result) pairs to a JSONL cassette file."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._seen: set[str] = set()
        self._lock = threading.Lock()

    def record(self, request: GenerationRequest, result: GenerationResult) -> None:
        with self._lock:
            if request.request_tag in self._seen:
                raise DuplicateTag(f"tag {request.request_tag!r} already recorded")
            self._seen.add(request.request_tag)
            entry = {
                "tag": request.request_tag,
                "request": request.to_dict(),
                "result": result.to_dict(),
            }
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry, ensure_ascii=False) + "\n")


def record_cassette(
    run: Iterable[tuple[GenerationRequest, GenerationResult]], path: str | Path
) -> Path:
    """Write a replayable cassette for a finished run. Tags must be unique."""
    recorder = CassetteRecorder(path)
    for request, result in run:
        recorder.record(request, result)
    return recorder.path


def load_cassette(path: str | Path) -> dict[str, dict]:
    entries: dict[str, dict] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            if entry["tag"] in entries:
                raise DuplicateTag(f"tag {entry['tag']!r} appears twice in {path}")
            entries[entry["tag"]] = entry
    return entries


@dataclass
class Gateway:
    """A backend handle with counting, recording and parallel dispatch."""

    backend: object
    parallelism: int = 1
    recorder: CassetteRecorder | None = None
    calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def backend_id(self) -> str:
        return getattr(self.backend, "backend_id", "unknown")

    def generate(self, request: GenerationRequest) -> GenerationResult:
        result = self.backend.complete(request)
        with self._lock:
            self.calls += 1
        if self.recorder is not None:
            self.recorder.record(request, result)
        return result

    def generate_many(self, requests_: Sequence[GenerationRequest]) -> list[GenerationResult]:
        """Run a batch; results come back in submission order."""
        if self.parallelism <= 1 or len(requests_) <= 1:
            return [self.generate(r) for r in requests_]
        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            return list(pool.map(self.generate, requests_))


def build_gateway(
    config: BackendConfig,
    cassette_path: str | Path | None = None,
    mock_fallback: Callable[[GenerationRequest], str] | None = None,
) -> Gateway:
    """Construct a Gateway for a backend config.

    ``cassette_path`` turns on recording; ``mock_fallback`` serves
    unscripted tags on mock backends (defaults to the built-in simulator).
    """
    if config.kind == "mock":
        if mock_fallback is None:
            from .simulate import simulate_response

            mock_fallback = simulate_response
        backend: object = MockBackend(script=config.mock_script, fallback=mock_fallback)
    elif config.kind == "replay":
        backend = ReplayBackend(config.cassette_path)
    else:
        backend = HttpBackend(config)
    recorder = CassetteRecorder(cassette_path) if cassette_path else None
    return Gateway(backend=backend, parallelism=config.parallelism, recorder=recorder)
