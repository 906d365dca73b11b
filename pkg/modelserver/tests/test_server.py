"""Protocol conformance: the harness's golden schema suite must pass against
both this server and `cofe serve-mock`, and the /embed invariants must hold."""

import contextlib
import socket
import subprocess
import sys
import time

import pytest
import requests

from cofe.protocol import run_conformance

from conftest import free_port, start_server
from modelserver.config import ModelSpec, ServerConfig


def test_health_lists_models(running_server):
    body = requests.get(running_server + "/health", timeout=5).json()
    assert body["status"] == "ok"
    assert sorted(body["models"]) == ["tiny-embed", "tiny-generate", "tiny-rerank"]


def test_conformance_against_model_server(running_server):
    summary = run_conformance(
        running_server,
        embed_model="tiny-embed",
        rerank_model="tiny-rerank",
        generate_model="tiny-generate",
    )
    assert summary["embed_dim"] == 32
    assert summary["rerank"] == "ok" and summary["generate"] == "ok"


@pytest.fixture(scope="module")
def mock_server_url():
    port = free_port()
    proc = subprocess.Popen(
        [sys.executable, "-m", "cofe.cli", "serve-mock", "--port", str(port)],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    base_url = f"http://127.0.0.1:{port}"
    deadline = time.monotonic() + 15
    while time.monotonic() < deadline:
        with contextlib.suppress(requests.RequestException):
            if requests.get(base_url + "/health", timeout=1).status_code == 200:
                break
        time.sleep(0.1)
    yield base_url
    proc.terminate()
    proc.wait(timeout=5)


def test_same_suite_passes_against_serve_mock(mock_server_url):
    summary = run_conformance(
        mock_server_url,
        embed_model="mock-embed",
        rerank_model="mock-rerank",
        generate_model="mock-generate",
    )
    assert summary["embed_dim"] == 256
    assert summary["rerank"] == "ok" and summary["generate"] == "ok"


def test_embed_row_count_and_constant_dim(running_server):
    for texts in (["a"], ["hello", "world", "alpha beta"], ["x"] * 7):
        body = requests.post(
            running_server + "/embed", json={"model": "tiny-embed", "texts": texts}, timeout=30
        ).json()
        assert len(body["vectors"]) == len(texts)
        assert {len(v) for v in body["vectors"]} == {32}


def test_repeated_embed_identical(running_server):
    payload = {"model": "tiny-embed", "texts": ["hello world", "gamma"]}
    first = requests.post(running_server + "/embed", json=payload, timeout=30).json()
    second = requests.post(running_server + "/embed", json=payload, timeout=30).json()
    assert first == second


def test_unknown_model_404(running_server):
    resp = requests.post(
        running_server + "/embed", json={"model": "nope", "texts": ["x"]}, timeout=10
    )
    assert resp.status_code == 404
    assert resp.json() == {"error": "unknown model"}
    # a registered id used on the wrong route is just as unknown
    resp = requests.post(
        running_server + "/generate", json={"model": "tiny-embed", "prompt": "x"}, timeout=10
    )
    assert resp.status_code == 404


def test_malformed_and_empty_requests(running_server):
    resp = requests.post(
        running_server + "/embed",
        data=b"{nope",
        headers={"Content-Type": "application/json"},
        timeout=10,
    )
    assert resp.status_code == 400
    assert "error" in resp.json()
    resp = requests.post(
        running_server + "/embed", json={"model": "tiny-embed", "texts": []}, timeout=10
    )
    assert resp.status_code == 400
    assert "error" in resp.json()


def test_generate_route(running_server):
    body = requests.post(
        running_server + "/generate",
        json={"model": "tiny-generate", "prompt": "hello world", "max_tokens": 8},
        timeout=60,
    ).json()
    assert isinstance(body["text"], str)


def test_rerank_route(running_server):
    body = requests.post(
        running_server + "/rerank",
        json={"model": "tiny-rerank", "query": "cars", "documents": ["a", "b", "c"]},
        timeout=30,
    ).json()
    assert len(body["scores"]) == 3


def test_load_failure_surfaces_in_health(tmp_path):
    config = ServerConfig(
        models={"broken": ModelSpec(kind="embed", path=str(tmp_path / "missing-model"))}
    )
    with pytest.raises(RuntimeError, match="error"):
        start_server(config, timeout=30)
