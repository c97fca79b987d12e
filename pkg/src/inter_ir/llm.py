"""Uniform text-generation interface: remote chat-completion service, local
deterministic mock, and an on-disk cache for exact offline replay.

The remote protocol is OpenAI-compatible chat completions (one user message,
`n` parallel samples). The mock produces pseudo-passages that are a pure
function of (prompt, sample index, seed) and embed the prompt's content
words, so expanded queries have real term overlap with the corpus in tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .corpus import truncate_tokens, tokenize

logger = logging.getLogger(__name__)

LLM_URL_ENV = "INTER_LLM_URL"
LLM_KEY_ENV = "INTER_LLM_KEY"
LLM_MODEL_ENV = "INTER_LLM_MODEL"

TRANSPORT_RETRIES = 3  # attempts = 1 + retries


class GenerationError(RuntimeError):
    """Base class for generation failures."""


class TransportError(GenerationError):
    """Retryable network/service failure."""


class AuthenticationError(GenerationError):
    """Credential rejection; never retried."""


class EmptyGenerationError(GenerationError):
    """Every sample came back empty."""


class CacheMissError(GenerationError):
    """Replay-only provider asked for a request not in the cache."""


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    num_samples: int = 10
    temperature: float = 1.0
    frequency_penalty: float = 0.0
    max_tokens: int = 256
    seed: int | None = None  # mock provider only

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError(f"num_samples must be >= 1, got {self.num_samples}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")

    def cache_key(self) -> str:
        params = {
            "prompt": self.prompt,
            "n": self.num_samples,
            "temperature": self.temperature,
            "frequency_penalty": self.frequency_penalty,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }
        blob = json.dumps(params, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class KnowledgeCollection:
    """The generated passages for one query, in order of receipt."""

    passages: list[str]
    provider_tag: str = ""

    def __len__(self) -> int:
        return len(self.passages)


class RateLimiter:
    """Minimum-interval limiter shared across worker threads."""

    def __init__(self, requests_per_minute: float):
        if requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        self._interval = 60.0 / requests_per_minute
        self._lock = threading.Lock()
        self._next_slot = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self._interval
        if wait > 0:
            time.sleep(wait)


class GenerationProvider:
    """sample() returns raw passages; generate() applies the shared contract."""

    tag: str = "abstract"

    def sample(self, request: GenerationRequest) -> list[str]:
        raise NotImplementedError


# Function/template words excluded from mock passage content extraction.
_MOCK_STOPWORDS = frozenset(
    """a an and are as at be by for from give has have in is it its of on or
    please possible question passage passages answer answering correct that
    the to was were what when where which who why will with write following
    this
    """.split()
)

_MOCK_LEXICON = (
    "analysis background context detail evidence factor feature finding history "
    "impact insight method nature origin overview pattern practice process region "
    "report research result role source structure study summary survey theme "
    "tradition trend aspect basis case cause change concept culture data effect "
    "element event example field focus form group idea issue level life model "
    "part period place point power property quality range reason record "
    "relation scale scope sector series service share stage standard state "
    "system term topic type unit use value view work world".split()
)


class MockProvider(GenerationProvider):
    """Deterministic offline stand-in; passages are pure functions of input.

    Passage i embeds the prompt's content words (so downstream expansion has
    term overlap with the query) plus seed-dependent filler and a unique ref
    marker distinguishing samples and seeds.
    """

    tag = "mock"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def sample(self, request: GenerationRequest) -> list[str]:
        seed = request.seed if request.seed is not None else self.seed
        content = []
        for token in tokenize(request.prompt):
            if token not in _MOCK_STOPWORDS and token not in content:
                content.append(token)
            if len(content) >= 40:
                break
        prompt_digest = hashlib.sha256(request.prompt.encode("utf-8")).hexdigest()
        passages = []
        for i in range(request.num_samples):
            rng = random.Random(f"{prompt_digest}:{seed}:{i}")
            filler = [rng.choice(_MOCK_LEXICON) for _ in range(24)]
            marker = hashlib.sha256(f"{prompt_digest}|{seed}|{i}".encode()).hexdigest()[:8]
            body = " ".join(content) if content else "general knowledge"
            passages.append(
                f"Generated passage {i + 1} about {body}. "
                f"It covers {' '.join(filler)} ref{marker}."
            )
        return passages


class OpenAiCompatProvider(GenerationProvider):
    """Chat-completions client; samples h passages via `n` when supported."""

    def __init__(self, url: str, api_key: str | None, model: str,
                 supports_n: bool = True, timeout: float = 60.0,
                 rate_limiter: RateLimiter | None = None):
        self.url = url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.supports_n = supports_n
        self.timeout = timeout
        self.rate_limiter = rate_limiter
        self.tag = f"openai-compat:{model}"

    @classmethod
    def from_env(cls, rate_limiter: RateLimiter | None = None) -> "OpenAiCompatProvider":
        url = os.environ.get(LLM_URL_ENV)
        model = os.environ.get(LLM_MODEL_ENV)
        if not url or not model:
            raise GenerationError(f"{LLM_URL_ENV} and {LLM_MODEL_ENV} must be set")
        return cls(url, os.environ.get(LLM_KEY_ENV), model, rate_limiter=rate_limiter)

    def _call(self, request: GenerationRequest, n: int) -> list[str]:
        if self.rate_limiter is not None:
            self.rate_limiter.acquire()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "n": n,
            "temperature": request.temperature,
            "frequency_penalty": request.frequency_penalty,
            "max_tokens": request.max_tokens,
        }
        try:
            response = requests.post(
                f"{self.url}/chat/completions", json=payload,
                headers=headers, timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"chat completion request failed: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthenticationError(f"authentication rejected ({response.status_code})")
        if response.status_code >= 400:
            raise TransportError(f"chat completion HTTP {response.status_code}: {response.text[:200]}")
        try:
            choices = response.json()["choices"]
            return [choice["message"]["content"] or "" for choice in choices]
        except (ValueError, KeyError, TypeError) as exc:
            raise TransportError(f"malformed chat completion response: {exc}") from exc

    def sample(self, request: GenerationRequest) -> list[str]:
        if self.supports_n:
            return self._call(request, request.num_samples)
        passages = []
        for _ in range(request.num_samples):
            passages.extend(self._call(request, 1))
        return passages


class CachingProvider(GenerationProvider):
    """Wraps a provider with a JSONL request/response cache for replay."""

    def __init__(self, inner: GenerationProvider, path: str | Path):
        self.inner = inner
        self.tag = inner.tag
        self.path = Path(path)
        self._lock = threading.Lock()
        self._table = _load_cache(self.path)

    def sample(self, request: GenerationRequest) -> list[str]:
        key = request.cache_key()
        with self._lock:
            if key in self._table:
                return list(self._table[key])
        passages = self.inner.sample(request)
        record = {
            "key": key,
            "prompt": request.prompt,
            "provider": self.inner.tag,
            "passages": passages,
        }
        with self._lock:
            self._table[key] = list(passages)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as out:
                out.write(json.dumps(record, sort_keys=True) + "\n")
        return passages


class ReplayProvider(GenerationProvider):
    """Serves only cached responses; any miss is an error (offline replay)."""

    tag = "cache-replay"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if not self.path.exists():
            raise CacheMissError(f"cache file not found: {self.path}")
        self._table = _load_cache(self.path)

    def sample(self, request: GenerationRequest) -> list[str]:
        key = request.cache_key()
        if key not in self._table:
            raise CacheMissError(f"request not in cache {self.path} (key {key[:12]}...)")
        return list(self._table[key])


def _load_cache(path: Path) -> dict[str, list[str]]:
    table: dict[str, list[str]] = {}
    if not path.exists():
        return table
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            table[record["key"]] = record["passages"]
    return table


def generate(provider: GenerationProvider, request: GenerationRequest, *,
             max_attempts: int = 1 + TRANSPORT_RETRIES,
             backoff: float = 0.5,
             sleep=time.sleep) -> KnowledgeCollection:
    """Sample a knowledge collection with bounded retry on transport failures.

    Passages are whitespace-trimmed, truncated to max_tokens words client-side
    (providers count subword tokens, we count words), and empty samples are
    dropped; all-empty is an error.
    """
    if not request.prompt.strip():
        raise GenerationError("prompt must be non-empty")
    last_error: TransportError | None = None
    for attempt in range(max_attempts):
        if attempt:
            sleep(backoff * 2 ** (attempt - 1))
        try:
            raw = provider.sample(request)
            break
        except TransportError as exc:
            last_error = exc
            logger.warning("generation attempt %d/%d failed: %s", attempt + 1, max_attempts, exc)
    else:
        raise TransportError(
            f"generation failed after {max_attempts} attempts: {last_error}"
        ) from last_error
    passages = []
    for sample in raw:
        trimmed = truncate_tokens(sample.strip(), request.max_tokens)
        if trimmed:
            passages.append(trimmed)
    if not passages:
        raise EmptyGenerationError("provider returned only empty samples")
    return KnowledgeCollection(passages=passages, provider_tag=provider.tag)


def mock_generate(request: GenerationRequest, seed: int = 0) -> KnowledgeCollection:
    return generate(MockProvider(seed), request)
