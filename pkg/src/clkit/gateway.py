"""Chat-completion and embedding clients over the OpenAI-compatible REST
shape, plus deterministic offline mocks for tests and dry runs.

Endpoint and credentials come from config or the CLKIT_BASE_URL /
CLKIT_API_KEY environment variables. API keys are never logged and never
appear in error messages or emitted reports.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import requests

ENV_API_KEY = "CLKIT_API_KEY"
ENV_BASE_URL = "CLKIT_BASE_URL"


class GatewayError(RuntimeError):
    pass


class AuthError(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class ProviderError(GatewayError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body_excerpt = body[:200]
        super().__init__(f"provider returned HTTP {status}: {self.body_excerpt}")


@dataclass(frozen=True)
class GenerationParams:
    model_name: str = "mock-chat"
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class ChatResult:
    text: str
    usage: dict[str, int] = field(default_factory=dict)
    latency_seconds: float = 0.0


@dataclass(frozen=True)
class EmbeddingResult:
    vector: tuple[float, ...]
    usage: dict[str, int] = field(default_factory=dict)
    latency_seconds: float = 0.0


class ChatClient(Protocol):
    def generate(self, prompt: str, params: GenerationParams) -> ChatResult: ...


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> EmbeddingResult: ...


class OpenAICompatClient:
    """Minimal client for /chat/completions and /embeddings endpoints.

    Retries transient transport errors, 429 and 5xx with exponential backoff
    up to ``max_retries`` additional attempts; every request carries a
    deadline so no call blocks indefinitely.
    """

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        embedding_model: str = "text-embedding-3-small",
        embedding_dimension: int = 1536,
        timeout_seconds: float = 60.0,
        max_retries: int = 3,
        backoff_base_seconds: float = 0.5,
        session: requests.Session | None = None,
    ):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        if not self.base_url:
            raise ValueError(f"no base URL configured (set {ENV_BASE_URL})")
        self._api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.embedding_model = embedding_model
        self.dimension = embedding_dimension
        self.timeout_seconds = timeout_seconds
        self.max_retries = max_retries
        self.backoff_base_seconds = backoff_base_seconds
        self._session = session or requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        headers = {"Authorization": f"Bearer {self._api_key}"}
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_base_seconds * (2 ** (attempt - 1)))
            try:
                resp = self._session.post(
                    url, json=payload, headers=headers, timeout=self.timeout_seconds
                )
            except requests.RequestException as exc:
                # Scrub: never include headers/key material in the message.
                last_exc = TransportError(f"{type(exc).__name__} while calling {url}")
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"authentication rejected (HTTP {resp.status_code})")
            if resp.status_code == 429:
                last_exc = RateLimited("rate limited (HTTP 429)")
                continue
            if resp.status_code >= 500:
                last_exc = ProviderError(resp.status_code, resp.text)
                continue
            if resp.status_code != 200:
                raise ProviderError(resp.status_code, resp.text)
            return resp.json()
        assert last_exc is not None
        raise last_exc

    def generate(self, prompt: str, params: GenerationParams) -> ChatResult:
        payload = {
            "model": params.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.seed is not None:
            payload["seed"] = params.seed
        start = time.monotonic()
        data = self._post("/chat/completions", payload)
        latency = time.monotonic() - start
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProviderError(200, f"unexpected response shape: {str(data)[:200]}") from None
        return ChatResult(text=text, usage=data.get("usage") or {}, latency_seconds=latency)

    def embed(self, text: str) -> EmbeddingResult:
        start = time.monotonic()
        data = self._post("/embeddings", {"model": self.embedding_model, "input": text})
        latency = time.monotonic() - start
        try:
            vector = tuple(float(x) for x in data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError):
            raise ProviderError(200, f"unexpected response shape: {str(data)[:200]}") from None
        if not all(np.isfinite(vector)):
            raise ProviderError(200, "embedding contains non-finite values")
        return EmbeddingResult(vector=vector, usage=data.get("usage") or {}, latency_seconds=latency)


def _stable_seed(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


class MockChatClient:
    """Offline chat client: canned text keyed by a hash of the prompt.

    ``response_fn`` overrides the canned text for scripted tests.
    """

    def __init__(self, response_fn=None):
        self.response_fn = response_fn
        self.calls = 0

    def generate(self, prompt: str, params: GenerationParams) -> ChatResult:
        self.calls += 1
        if self.response_fn is not None:
            text = self.response_fn(prompt)
        else:
            digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
            text = f"mock-response-{digest[:16]}"
        return ChatResult(text=text, usage={"total_tokens": 0}, latency_seconds=0.0)


class MockEmbedder:
    """Offline embedder: deterministic pseudo-random unit vector per text."""

    def __init__(self, dimension: int = 64, vector_fn=None):
        self.dimension = dimension
        self.vector_fn = vector_fn
        self.calls = 0

    def embed(self, text: str) -> EmbeddingResult:
        self.calls += 1
        if self.vector_fn is not None:
            vec = np.asarray(self.vector_fn(text), dtype=np.float64)
        else:
            rng = np.random.default_rng(_stable_seed(text))
            vec = rng.standard_normal(self.dimension)
            vec = vec / np.linalg.norm(vec)
        return EmbeddingResult(vector=tuple(float(x) for x in vec), latency_seconds=0.0)
