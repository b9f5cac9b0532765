"""Chat-completion and embedding transport.

The wire format is the OpenAI-compatible ``/v1/chat/completions`` and
``/v1/embeddings`` pair. Tests never touch the network: ``MockChat`` replays
queued replies and ``OfflineEmbedder`` is a deterministic hashing embedder.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import httpx
import numpy as np

DEFAULT_TIMEOUT_S = 60.0
DEFAULT_ATTEMPTS = 3


class GatewayError(Exception):
    """Base for every transport-level failure the agent can fall back on."""


class ConfigurationError(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class GatewayTimeout(TransportError):
    pass


class HttpStatusError(TransportError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.2
    max_tokens: int = 512

    def __post_init__(self):
        msgs = tuple((str(r), str(c)) for r, c in self.messages)
        if not msgs:
            raise ValueError("messages must be nonempty")
        if msgs[0][0] != "system":
            raise ValueError("first message must have role 'system'")
        bad = [r for r, _ in msgs if r not in ROLES]
        if bad:
            raise ValueError(f"unknown role(s): {bad}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        object.__setattr__(self, "messages", msgs)

    def payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    def digest(self) -> str:
        raw = json.dumps(self.payload(), sort_keys=True, ensure_ascii=False).encode()
        return hashlib.sha256(raw).hexdigest()[:16]


class Transcript:
    """Line-delimited request/response log; thread safe."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        self._lock = threading.Lock()

    def record(self, agent, round_index, request_hash: str, response: str, latency_ms: float) -> None:
        rec = {
            "timestamp": time.time(),
            "agent": agent,
            "round": round_index,
            "request_hash": request_hash,
            "response": response,
            "latency_ms": round(latency_ms, 3),
        }
        with self._lock:
            self.records.append(rec)
            if self.path:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec) + "\n")


class ChatClient:
    """Retry wrapper; subclasses implement ``_send``."""

    def __init__(self, max_attempts: int = DEFAULT_ATTEMPTS, backoff_s: float = 0.5, sleep: Callable[[float], None] = time.sleep, transcript: Transcript | None = None):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.sleep = sleep
        self.transcript = transcript
        self.attempts_made = 0

    def _send(self, req: ChatRequest) -> str:
        raise NotImplementedError

    def _retryable(self, exc: GatewayError) -> bool:
        if isinstance(exc, HttpStatusError):
            return exc.status == 429 or exc.status >= 500
        return isinstance(exc, TransportError)

    def chat(self, req: ChatRequest, agent=None, round_index=None) -> str:
        last: GatewayError | None = None
        for attempt in range(self.max_attempts):
            self.attempts_made += 1
            t0 = time.perf_counter()
            try:
                text = self._send(req)
            except GatewayError as exc:
                last = exc
                if not self._retryable(exc) or attempt == self.max_attempts - 1:
                    break
                self.sleep(self.backoff_s * (2**attempt))
                continue
            if self.transcript is not None:
                self.transcript.record(agent, round_index, req.digest(), text, (time.perf_counter() - t0) * 1e3)
            return text
        assert last is not None
        raise last


class HttpChatClient(ChatClient):
    def __init__(self, base_url: str, api_key: str | None = None, timeout_s: float = DEFAULT_TIMEOUT_S, transport: httpx.BaseTransport | None = None, **kw):
        super().__init__(**kw)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._http = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout_s, transport=transport)

    def _post(self, path: str, payload: dict) -> dict:
        try:
            resp = self._http.post(path, json=payload)
        except httpx.TimeoutException as exc:
            raise GatewayTimeout(str(exc) or "timeout") from exc
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if not 200 <= resp.status_code < 300:
            raise HttpStatusError(resp.status_code, resp.text)
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"response is not JSON: {exc}") from exc

    def _send(self, req: ChatRequest) -> str:
        data = self._post("/v1/chat/completions", req.payload())
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion: {exc}") from exc

    def embeddings(self, model: str, texts: Sequence[str]) -> list[list[float]]:
        data = self._post("/v1/embeddings", {"model": model, "input": list(texts)})
        return [d["embedding"] for d in sorted(data["data"], key=lambda d: d.get("index", 0))]

    def close(self):
        self._http.close()


class MockChat(ChatClient):
    """Replays queued replies (or a function of the request).

    ``faults`` is a list of exceptions raised, one per attempt, before any
    reply is served; it drives the retry path in tests.
    """

    def __init__(self, replies: Sequence[str] | Callable[[ChatRequest], str] = (), faults: Sequence[Exception] = (), **kw):
        kw.setdefault("sleep", lambda s: None)
        super().__init__(**kw)
        self._fn = replies if callable(replies) else None
        self._queue = [] if callable(replies) else list(replies)
        self._faults = list(faults)
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    def _send(self, req: ChatRequest) -> str:
        with self._lock:
            self.requests.append(req)
            if self._faults:
                raise self._faults.pop(0)
            if self._fn is not None:
                return self._fn(req)
            if not self._queue:
                raise TransportError("mock reply queue exhausted")
            return self._queue.pop(0)


@dataclass(frozen=True)
class LlmSettings:
    base_url: str
    api_key: str | None
    model: str
    embed_model: str | None

    @classmethod
    def from_env(cls, env=None) -> "LlmSettings":
        env = os.environ if env is None else env
        base = env.get("MAPC_LLM_BASE_URL")
        if not base:
            raise ConfigurationError("MAPC_LLM_BASE_URL is not set; the llm policy needs an endpoint")
        return cls(base, env.get("MAPC_LLM_API_KEY"), env.get("MAPC_LLM_MODEL", "gpt-4o"), env.get("MAPC_EMBED_MODEL"))


# --------------------------------------------------------------------------
# embeddings

_TOKEN = re.compile(r"[a-z0-9]+")


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    source_hash: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = np.linalg.norm(v)
        if not n > 0 or not np.isfinite(n):
            raise EmbeddingError("cannot normalize a zero or non-finite vector")
        object.__setattr__(self, "values", v / n)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def text_hash64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


class OfflineEmbedder:
    """Signed feature hashing over lowercase alphanumeric tokens.

    Bucket and sign come from two keyed blake2b digests, so vectors are
    identical across processes and platforms.
    """

    CACHE_SIZE = 4096

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self._tokens: dict[str, tuple[int, float]] = {}
        self._memo: dict[str, EmbeddingVector] = {}

    def _bucket(self, tok: str) -> tuple[int, float]:
        hit = self._tokens.get(tok)
        if hit is not None:
            return hit
        b = tok.encode("utf-8")
        idx = int.from_bytes(hashlib.blake2b(b, digest_size=8, key=b"bucket").digest(), "big") % self.dim
        sign = 1.0 if hashlib.blake2b(b, digest_size=1, key=b"sign").digest()[0] & 1 else -1.0
        self._tokens[tok] = (idx, sign)
        return idx, sign

    def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise EmbeddingError("cannot embed empty text")
        hit = self._memo.get(text)
        if hit is not None:
            return hit
        tokens = _TOKEN.findall(text.lower())
        if not tokens:
            raise EmbeddingError("text has no alphanumeric tokens")
        v = np.zeros(self.dim)
        for tok in tokens:
            i, s = self._bucket(tok)
            v[i] += s
        if not np.any(v):
            # every token cancelled; fall back to unsigned counts
            for tok in tokens:
                v[self._bucket(tok)[0]] += 1.0
        out = EmbeddingVector(v, text_hash64(text))
        if len(self._memo) >= self.CACHE_SIZE:
            self._memo.clear()
        self._memo[text] = out
        return out

    __call__ = embed


class RemoteEmbedder:
    def __init__(self, client: HttpChatClient, model: str):
        self.client = client
        self.model = model

    def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise EmbeddingError("cannot embed empty text")
        vec = self.client.embeddings(self.model, [text])[0]
        return EmbeddingVector(np.asarray(vec, dtype=float), text_hash64(text))

    __call__ = embed


def embed(text: str, embedder=None) -> EmbeddingVector:
    return (embedder or OfflineEmbedder()).embed(text)


def cosine(a, b) -> float:
    va = a.values if isinstance(a, EmbeddingVector) else np.asarray(a, dtype=float)
    vb = b.values if isinstance(b, EmbeddingVector) else np.asarray(b, dtype=float)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise ValueError("cosine of a zero vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def client_from_settings(settings: LlmSettings, transcript: Transcript | None = None) -> HttpChatClient:
    return HttpChatClient(settings.base_url, settings.api_key, transcript=transcript)


def embedder_from_settings(settings: LlmSettings | None, client: HttpChatClient | None = None):
    if settings is not None and settings.embed_model and client is not None:
        return RemoteEmbedder(client, settings.embed_model)
    return OfflineEmbedder()

