"""Embedding/reranking/generation backends behind one uniform interface.

Every endpoint is either a remote HTTP service (native wire protocol, or an
OpenAI-compatible adapter for embed/generate) or the deterministic built-in
mock. Mocks are pure functions of their inputs, pinned bit-exactly so runs
are reproducible offline:

  embed    dim 256; each token (lowercased) adds 1.0 at FNV-1a-64(token) % 256,
           then L2-normalize (all-zero stays zero)
  rerank   |distinct query tokens present in chunk| / |distinct query tokens|
  generate echo of the prompt's context block (or the prompt itself when no
           context markers are present), truncated to 256 tokens
"""

from __future__ import annotations

import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import requests

from .chunking import Chunk, tokenize
from .errors import BackendError, DataError

MOCK_URL = "mock"
MOCK_EMBED_DIM = 256
MOCK_GENERATE_MAX_TOKENS = 256

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

# Sleep schedule between retries on timeout/5xx (3 attempts total).
_RETRY_BACKOFF = (0.5, 1.0, 2.0)
_RETRY_ATTEMPTS = 3


@dataclass(frozen=True)
class BackendEndpoint:
    kind: str  # embed | rerank | generate
    base_url: str = MOCK_URL
    model_id: str = "mock"
    timeout: float = 30.0
    max_parallel_requests: int = 4
    max_batch: int = 16
    protocol: str = "native"  # native | openai

    def __post_init__(self):
        if self.kind not in ("embed", "rerank", "generate"):
            raise DataError(f"unknown backend kind {self.kind!r}")
        if self.timeout <= 0:
            raise DataError("timeout must be > 0")
        if self.max_parallel_requests < 1:
            raise DataError("max_parallel_requests must be >= 1")
        if self.max_batch < 1:
            raise DataError("max_batch must be >= 1")
        if self.protocol not in ("native", "openai"):
            raise DataError(f"unknown protocol {self.protocol!r}")

    @property
    def is_mock(self) -> bool:
        return self.base_url == MOCK_URL


def mock_endpoint(kind: str) -> BackendEndpoint:
    return BackendEndpoint(kind=kind, base_url=MOCK_URL, model_id=f"mock-{kind}")


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _token_surfaces(text: str) -> list[str]:
    return [t.surface.lower() for t in tokenize(text)]


def l2_normalize(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return v
    return v / norm


def mock_embedding(text: str) -> np.ndarray:
    v = np.zeros(MOCK_EMBED_DIM, dtype=np.float64)
    for tok in _token_surfaces(text):
        v[fnv1a64(tok.encode("utf-8")) % MOCK_EMBED_DIM] += 1.0
    return l2_normalize(v)


def mock_rerank_scores(query: str, texts: list[str]) -> list[float]:
    q = set(_token_surfaces(query))
    if not q:
        return [0.0 for _ in texts]
    scores = []
    for text in texts:
        present = q & set(_token_surfaces(text))
        scores.append(len(present) / len(q))
    return scores


_CONTEXT_RE = re.compile(r"Context:\n(.*?)\nQuestion:", re.DOTALL)
_NUMBERING_RE = re.compile(r"^\[\d+\] ", re.MULTILINE)


def truncate_tokens(text: str, max_tokens: int) -> str:
    tokens = tokenize(text)
    if len(tokens) <= max_tokens:
        return text
    end = tokens[max_tokens - 1].byte_span[1]
    return text.encode("utf-8")[:end].decode("utf-8")


def mock_generate(prompt: str, max_tokens: Optional[int] = None) -> str:
    """Echo the context block of a RAG prompt (numbered chunk texts, joined
    by newlines); prompts without the context markers echo back unchanged."""
    if not prompt:
        return ""
    m = _CONTEXT_RE.search(prompt)
    if m:
        block = m.group(1)
        if block.strip() == "(none)":
            return ""
        out = _NUMBERING_RE.sub("", block)
    else:
        out = prompt
    return truncate_tokens(out, max_tokens or MOCK_GENERATE_MAX_TOKENS)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise DataError(f"embedding dimension mismatch: {a.shape} vs {b.shape}")
    return min(1.0, max(-1.0, float(np.dot(a, b))))


class _HttpClient:
    """Shared transport: bounded parallelism, bearer token, 3-attempt retry
    on timeouts and 5xx with 0.5s/1s/2s backoff."""

    def __init__(self, ep: BackendEndpoint):
        self.ep = ep
        self.calls = 0
        self._session = requests.Session()
        self._sem = threading.Semaphore(ep.max_parallel_requests)
        self._lock = threading.Lock()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get("COFE_API_TOKEN")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def post(self, path: str, payload: dict) -> dict:
        url = self.ep.base_url.rstrip("/") + path
        with self._lock:
            self.calls += 1
        last_err: Exception | None = None
        for attempt in range(_RETRY_ATTEMPTS):
            try:
                with self._sem:
                    resp = self._session.post(
                        url, json=payload, headers=self._headers(), timeout=self.ep.timeout
                    )
            except (requests.Timeout, requests.ConnectionError) as e:
                last_err = e
                if attempt < _RETRY_ATTEMPTS - 1:
                    time.sleep(_RETRY_BACKOFF[attempt])
                continue
            if resp.status_code >= 500:
                last_err = BackendError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
                if attempt < _RETRY_ATTEMPTS - 1:
                    time.sleep(_RETRY_BACKOFF[attempt])
                continue
            if resp.status_code >= 300:
                raise BackendError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as e:
                raise BackendError(f"{url}: malformed JSON response: {e}") from e
        raise BackendError(f"{url}: failed after {_RETRY_ATTEMPTS} attempts: {last_err}")


class EmbedClient:
    def __init__(self, ep: BackendEndpoint):
        if ep.kind != "embed":
            raise DataError(f"endpoint kind must be embed, got {ep.kind!r}")
        self.ep = ep
        self.calls = 0  # embed invocations that actually hit the backend/mock
        self._http = None if ep.is_mock else _HttpClient(ep)

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        if not texts:
            raise DataError("embed_texts requires a non-empty text list")
        self.calls += 1
        if self.ep.is_mock:
            return [mock_embedding(t) for t in texts]
        vectors: list[np.ndarray] = []
        for lo in range(0, len(texts), self.ep.max_batch):
            batch = texts[lo : lo + self.ep.max_batch]
            vectors.extend(self._embed_batch(batch))
        dims = {v.shape[0] for v in vectors}
        if len(dims) != 1:
            raise BackendError(f"inconsistent embedding dimensions from backend: {sorted(dims)}")
        return [l2_normalize(v) for v in vectors]

    def _embed_batch(self, batch: list[str]) -> list[np.ndarray]:
        if self.ep.protocol == "openai":
            body = self._http.post("/v1/embeddings", {"model": self.ep.model_id, "input": batch})
            data = body.get("data")
            if not isinstance(data, list) or len(data) != len(batch):
                raise BackendError("embeddings response must carry one row per input")
            rows = sorted(data, key=lambda d: d.get("index", 0))
            raw = [r.get("embedding") for r in rows]
        else:
            body = self._http.post("/embed", {"model": self.ep.model_id, "texts": batch})
            raw = body.get("vectors")
        if not isinstance(raw, list) or len(raw) != len(batch):
            raise BackendError("embed response must carry one vector per input")
        return [np.asarray(v, dtype=np.float64) for v in raw]


class RerankClient:
    def __init__(self, ep: BackendEndpoint):
        if ep.kind != "rerank":
            raise DataError(f"endpoint kind must be rerank, got {ep.kind!r}")
        if ep.protocol == "openai":
            raise DataError("the OpenAI-compatible adapter has no rerank route; use protocol=native")
        self.ep = ep
        self.calls = 0
        self._http = None if ep.is_mock else _HttpClient(ep)

    def rerank(self, query: str, texts: list[str]) -> list[float]:
        if not texts:
            raise DataError("rerank requires a non-empty chunk list")
        self.calls += 1
        if self.ep.is_mock:
            return mock_rerank_scores(query, texts)
        scores: list[float] = []
        for lo in range(0, len(texts), self.ep.max_batch):
            batch = texts[lo : lo + self.ep.max_batch]
            body = self._http.post(
                "/rerank", {"model": self.ep.model_id, "query": query, "documents": batch}
            )
            got = body.get("scores")
            if not isinstance(got, list) or len(got) != len(batch):
                raise BackendError("rerank response must carry one score per document")
            scores.extend(float(s) for s in got)
        return scores


class GenerateClient:
    def __init__(self, ep: BackendEndpoint):
        if ep.kind != "generate":
            raise DataError(f"endpoint kind must be generate, got {ep.kind!r}")
        self.ep = ep
        self.calls = 0
        self._http = None if ep.is_mock else _HttpClient(ep)

    def generate(self, prompt: str, max_tokens: Optional[int] = None) -> str:
        self.calls += 1
        if self.ep.is_mock:
            return mock_generate(prompt, max_tokens)
        if self.ep.protocol == "openai":
            payload: dict = {
                "model": self.ep.model_id,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": 0,
            }
            if max_tokens is not None:
                payload["max_tokens"] = max_tokens
            body = self._http.post("/v1/chat/completions", payload)
            try:
                text = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as e:
                raise BackendError("chat response missing choices[0].message.content") from e
        else:
            payload = {"model": self.ep.model_id, "prompt": prompt}
            if max_tokens is not None:
                payload["max_tokens"] = max_tokens
            body = self._http.post("/generate", payload)
            text = body.get("text")
        if not isinstance(text, str):
            raise BackendError("generate response must carry a string 'text' field")
        return text


_CLIENTS: dict[BackendEndpoint, object] = {}
_CLIENTS_LOCK = threading.Lock()


def get_client(ep: BackendEndpoint):
    """One client per endpoint: sessions, counters and request bounds are shared."""
    with _CLIENTS_LOCK:
        client = _CLIENTS.get(ep)
        if client is None:
            client = {"embed": EmbedClient, "rerank": RerankClient, "generate": GenerateClient}[
                ep.kind
            ](ep)
            _CLIENTS[ep] = client
        return client


def embed_texts(ep: BackendEndpoint, texts: list[str]) -> list[np.ndarray]:
    return get_client(ep).embed(texts)


def rerank(ep: BackendEndpoint, query: str, chunks: list[Chunk]) -> list[float]:
    return get_client(ep).rerank(query, [c.text for c in chunks])


def generate(ep: BackendEndpoint, prompt: str, max_tokens: Optional[int] = None) -> str:
    return get_client(ep).generate(prompt, max_tokens)
