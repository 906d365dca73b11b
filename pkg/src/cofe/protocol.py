"""Schema-level conformance checks for the native wire protocol.

Any server claiming to implement /embed, /rerank, /generate (plus /health)
can be validated with :func:`run_conformance`. Checks cover response shapes,
row counts, embedding dimension consistency, determinism of repeated /embed
calls on identical input, and the unknown-model error contract. Values are
model-specific and are not compared across servers.
"""

from __future__ import annotations

import requests

from .errors import BackendError

_PROBE_TEXTS = ["alpha beta", "智能汽车", "alpha beta"]


class ProtocolViolation(BackendError):
    pass


def _post(base_url: str, path: str, payload: dict, timeout: float) -> requests.Response:
    try:
        return requests.post(base_url.rstrip("/") + path, json=payload, timeout=timeout)
    except requests.RequestException as e:
        raise ProtocolViolation(f"POST {path} failed: {e}") from e


def _expect_json(resp: requests.Response, path: str) -> dict:
    try:
        body = resp.json()
    except ValueError as e:
        raise ProtocolViolation(f"{path}: body is not JSON") from e
    if not isinstance(body, dict):
        raise ProtocolViolation(f"{path}: body must be a JSON object")
    return body


def check_health(base_url: str, timeout: float = 30.0) -> list[str]:
    try:
        resp = requests.get(base_url.rstrip("/") + "/health", timeout=timeout)
    except requests.RequestException as e:
        raise ProtocolViolation(f"GET /health failed: {e}") from e
    body = _expect_json(resp, "/health")
    if resp.status_code != 200 or "status" not in body or not isinstance(body.get("models"), list):
        raise ProtocolViolation(f"/health must be 200 with status and models, got {body}")
    return [str(m) for m in body["models"]]


def check_embed(base_url: str, model_id: str, timeout: float = 30.0) -> int:
    """Returns the embedding dimension after shape/determinism checks."""
    resp = _post(base_url, "/embed", {"model": model_id, "texts": _PROBE_TEXTS}, timeout)
    body = _expect_json(resp, "/embed")
    if resp.status_code != 200:
        raise ProtocolViolation(f"/embed returned {resp.status_code}: {body}")
    vectors = body.get("vectors")
    if not isinstance(vectors, list) or len(vectors) != len(_PROBE_TEXTS):
        raise ProtocolViolation("/embed must return one vector per input text")
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        raise ProtocolViolation(f"/embed returned inconsistent dimensions: {sorted(dims)}")
    if any(not all(isinstance(x, (int, float)) for x in v) for v in vectors):
        raise ProtocolViolation("/embed vectors must be numeric")
    if vectors[0] != vectors[2]:
        raise ProtocolViolation("/embed must be deterministic for identical inputs")
    again = _expect_json(
        _post(base_url, "/embed", {"model": model_id, "texts": _PROBE_TEXTS}, timeout), "/embed"
    ).get("vectors")
    if again != vectors:
        raise ProtocolViolation("/embed must return identical vectors on repeated calls")
    return dims.pop()


def check_rerank(base_url: str, model_id: str, timeout: float = 30.0) -> None:
    documents = ["intelligent cars are discussed here", "weather tomorrow", "智能汽车发展"]
    resp = _post(
        base_url,
        "/rerank",
        {"model": model_id, "query": "intelligent cars", "documents": documents},
        timeout,
    )
    body = _expect_json(resp, "/rerank")
    if resp.status_code != 200:
        raise ProtocolViolation(f"/rerank returned {resp.status_code}: {body}")
    scores = body.get("scores")
    if not isinstance(scores, list) or len(scores) != len(documents):
        raise ProtocolViolation("/rerank must return one score per document")
    if any(not isinstance(s, (int, float)) for s in scores):
        raise ProtocolViolation("/rerank scores must be numeric")


def check_generate(base_url: str, model_id: str, timeout: float = 60.0) -> None:
    resp = _post(
        base_url,
        "/generate",
        {"model": model_id, "prompt": "Reply with one word.", "max_tokens": 8},
        timeout,
    )
    body = _expect_json(resp, "/generate")
    if resp.status_code != 200:
        raise ProtocolViolation(f"/generate returned {resp.status_code}: {body}")
    if not isinstance(body.get("text"), str):
        raise ProtocolViolation("/generate must return a string 'text' field")


def check_unknown_model(base_url: str, timeout: float = 30.0) -> None:
    resp = _post(base_url, "/embed", {"model": "no-such-model", "texts": ["x"]}, timeout)
    body = _expect_json(resp, "/embed")
    if resp.status_code != 404 or "error" not in body:
        raise ProtocolViolation(
            f"unknown model must yield 404 with an error body, got {resp.status_code}: {body}"
        )


def run_conformance(
    base_url: str,
    embed_model: str | None = None,
    rerank_model: str | None = None,
    generate_model: str | None = None,
    timeout: float = 60.0,
) -> dict:
    """Run every applicable check; raises ProtocolViolation on the first failure."""
    summary: dict = {"health_models": check_health(base_url, timeout)}
    if embed_model:
        summary["embed_dim"] = check_embed(base_url, embed_model, timeout)
    if rerank_model:
        check_rerank(base_url, rerank_model, timeout)
        summary["rerank"] = "ok"
    if generate_model:
        check_generate(base_url, generate_model, timeout)
        summary["generate"] = "ok"
    check_unknown_model(base_url, timeout)
    summary["unknown_model"] = "ok"
    return summary
