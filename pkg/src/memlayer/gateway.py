"""Single choke-point for model inference: chat completion and text embedding.

Two backends share one wire contract:

- HttpBackend speaks the OpenAI-compatible JSON endpoints
  (POST {base_url}/chat/completions, POST {base_url}/embeddings).
- ScriptedBackend replays recorded completions keyed by a stable hash of the
  rendered messages, and embeds with the deterministic feature-hashing
  embedder, so the whole system runs offline and bit-reproducibly.

Every vector leaving this module has unit L2 norm within 1e-6.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import httpx

from .errors import (
    EmptyInput,
    FixtureMissing,
    ProtocolError,
    RemoteError,
    TransportError,
)

VALID_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in VALID_ROLES:
            raise ValueError(f"role must be one of {VALID_ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        object.__setattr__(self, "messages", tuple(self.messages))


@dataclass(frozen=True)
class BackendConfig:
    base_url: str
    api_key: str = ""
    chat_model: str = "gpt-4.1-mini"
    embed_model: str = "text-embedding-3-small"
    timeout: float = 30.0
    max_retries: int = 2

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_env(cls, **overrides) -> "BackendConfig":
        """Read MEMLAYER_* environment variables; explicit overrides win."""
        values = {
            "base_url": os.environ.get("MEMLAYER_BASE_URL", "https://api.openai.com/v1"),
            "api_key": os.environ.get("MEMLAYER_API_KEY", ""),
        }
        if "MEMLAYER_CHAT_MODEL" in os.environ:
            values["chat_model"] = os.environ["MEMLAYER_CHAT_MODEL"]
        if "MEMLAYER_EMBED_MODEL" in os.environ:
            values["embed_model"] = os.environ["MEMLAYER_EMBED_MODEL"]
        values.update(overrides)
        return cls(**values)


def prompt_hash(messages: tuple[ChatMessage, ...] | list[ChatMessage]) -> str:
    """Stable hash of rendered messages; the scripted fixture key."""
    payload = json.dumps(
        [{"role": m.role, "content": m.content} for m in messages],
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def deterministic_embed(text: str, d: int = 128) -> tuple[float, ...]:
    """Signed feature hashing of character 3-grams into d buckets, L2-normalized.

    Fully deterministic across runs and platforms (bucket and sign come from
    sha256 of the gram). Texts shorter than 3 characters, or grams that cancel
    exactly, fall back to hashing the whole text as a single feature so the
    result is always a unit vector.
    """
    if not text:
        raise EmptyInput("cannot embed empty text")
    if d < 8:
        raise ValueError("embedding dimension must be >= 8")
    lowered = text.lower()
    grams = [lowered[i : i + 3] for i in range(len(lowered) - 2)] or [lowered]
    buckets = [0.0] * d
    for gram in grams:
        digest = hashlib.sha256(gram.encode("utf-8")).digest()
        index = int.from_bytes(digest[:8], "big") % d
        sign = 1.0 if digest[8] % 2 == 0 else -1.0
        buckets[index] += sign
    norm = math.sqrt(sum(v * v for v in buckets))
    if norm == 0.0:
        digest = hashlib.sha256(lowered.encode("utf-8")).digest()
        index = int.from_bytes(digest[:8], "big") % d
        buckets[index] = 1.0 if digest[8] % 2 == 0 else -1.0
        norm = 1.0
    return tuple(v / norm for v in buckets)


def _normalize(vector: list[float]) -> tuple[float, ...]:
    norm = math.sqrt(sum(v * v for v in vector))
    if norm == 0.0:
        raise ProtocolError("backend returned a zero embedding vector")
    return tuple(v / norm for v in vector)


class HttpBackend:
    """OpenAI-compatible HTTP client with retry on transport failures only.

    RemoteError (any non-2xx status) is never retried; the caller decides.
    """

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None):
        self.config = config
        headers = {}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = client or httpx.Client(
            base_url=config.base_url, headers=headers, timeout=config.timeout
        )

    def _post(self, path: str, payload: dict) -> dict:
        last_exc: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                response = self._client.post(path, json=payload)
            except httpx.HTTPError as exc:
                last_exc = exc
                if attempt < self.config.max_retries:
                    time.sleep(min(0.2 * 2**attempt, 2.0))
                continue
            if not 200 <= response.status_code < 300:
                raise RemoteError(response.status_code, response.text)
            try:
                return response.json()
            except ValueError as exc:
                raise ProtocolError(f"response body is not JSON: {exc}") from exc
        raise TransportError(f"request failed after {self.config.max_retries + 1} attempts: {last_exc}")

    def chat(self, request: ChatRequest) -> str:
        body = self._post(
            "/chat/completions",
            {
                "model": request.model,
                "messages": [{"role": m.role, "content": m.content} for m in request.messages],
                "temperature": request.temperature,
            },
        )
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed chat response: {exc}") from exc
        if not isinstance(content, str):
            raise ProtocolError("chat response content is not text")
        return content

    def embed(self, text: str) -> list[float]:
        body = self._post("/embeddings", {"model": self.config.embed_model, "input": text})
        try:
            vector = body["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed embeddings response: {exc}") from exc
        if not isinstance(vector, list) or not vector:
            raise ProtocolError("embeddings response vector missing or empty")
        return [float(v) for v in vector]


class ScriptedBackend:
    """Replays recorded completions; deterministic embeddings; no network.

    Fixtures are a mapping of prompt hash to completion text, or a JSONL file
    of {"prompt_hash": ..., "completion": ...} records.
    """

    def __init__(self, fixtures: Mapping[str, str] | str | Path | None = None, dim: int = 128):
        self.dim = dim
        self._completions: dict[str, str] = {}
        if isinstance(fixtures, (str, Path)):
            for line in Path(fixtures).read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                record = json.loads(line)
                self._completions[record["prompt_hash"]] = record["completion"]
        elif fixtures:
            self._completions.update(fixtures)

    def chat(self, request: ChatRequest) -> str:
        key = prompt_hash(request.messages)
        if key not in self._completions:
            preview = request.messages[-1].content[:120].replace("\n", " ")
            raise FixtureMissing(f"no fixture for prompt hash {key} (prompt starts: {preview!r})")
        return self._completions[key]

    def embed(self, text: str) -> list[float]:
        return list(deterministic_embed(text, self.dim))


class LlmGateway:
    """Facade every caller goes through; bounds in-flight requests and
    guarantees the embedding normalization contract."""

    def __init__(
        self,
        backend: HttpBackend | ScriptedBackend,
        chat_model: str = "gpt-4.1-mini",
        max_in_flight: int = 4,
    ):
        self.backend = backend
        self.chat_model = chat_model
        self._slots = threading.BoundedSemaphore(max_in_flight)

    @classmethod
    def from_config(cls, config: BackendConfig, max_in_flight: int = 4) -> "LlmGateway":
        return cls(HttpBackend(config), chat_model=config.chat_model, max_in_flight=max_in_flight)

    @classmethod
    def scripted(
        cls,
        fixtures: Mapping[str, str] | str | Path | None = None,
        dim: int = 128,
        max_in_flight: int = 4,
    ) -> "LlmGateway":
        return cls(ScriptedBackend(fixtures, dim=dim), max_in_flight=max_in_flight)

    def chat_complete(self, request: ChatRequest) -> str:
        """First choice's message content, verbatim."""
        with self._slots:
            return self.backend.chat(request)

    def complete_text(self, prompt: str, model: str | None = None, temperature: float = 0.0) -> str:
        request = ChatRequest(
            model=model or self.chat_model,
            messages=(ChatMessage("user", prompt),),
            temperature=temperature,
        )
        return self.chat_complete(request)

    def embed_text(self, text: str) -> tuple[float, ...]:
        """Unit-norm embedding regardless of backend normalization."""
        if not text:
            raise EmptyInput("cannot embed empty text")
        with self._slots:
            vector = self.backend.embed(text)
        return _normalize(list(vector))
