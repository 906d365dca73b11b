import socket
import threading
import time

import pytest
import requests
import torch

from modelserver.config import ModelSpec, ServerConfig

VOCAB = (
    ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    + list("abcdefghijklmnopqrstuvwxyz0123456789")
    + ["hello", "world", "alpha", "beta", "gamma", "cars", "intelligent", "##s", "##ing"]
)


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """Three tiny randomly initialized local models sharing one tokenizer."""
    from transformers import (
        BertConfig,
        BertForSequenceClassification,
        BertLMHeadModel,
        BertModel,
        BertTokenizer,
    )

    root = tmp_path_factory.mktemp("tiny-models")
    vocab_file = root / "vocab.txt"
    vocab_file.write_text("\n".join(VOCAB) + "\n", encoding="utf-8")
    tokenizer = BertTokenizer(str(vocab_file))

    size = dict(
        vocab_size=len(VOCAB),
        hidden_size=32,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=128,
    )
    torch.manual_seed(20240601)
    for name, cls, extra in (
        ("embed", BertModel, {}),
        ("rerank", BertForSequenceClassification, {"num_labels": 1}),
        ("generate", BertLMHeadModel, {"is_decoder": True}),
    ):
        model = cls(BertConfig(**size, **extra))
        model.save_pretrained(root / name)
        tokenizer.save_pretrained(root / name)
    return root


@pytest.fixture(scope="session")
def server_config(tiny_model_dir):
    return ServerConfig(
        models={
            "tiny-embed": ModelSpec(kind="embed", path=str(tiny_model_dir / "embed")),
            "tiny-rerank": ModelSpec(kind="rerank", path=str(tiny_model_dir / "rerank")),
            "tiny-generate": ModelSpec(kind="generate", path=str(tiny_model_dir / "generate")),
        },
        max_batch=2,
    )


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def start_server(config: ServerConfig, timeout: float = 60.0) -> tuple[str, object]:
    """Run uvicorn in a daemon thread; wait until /health reports ok."""
    import uvicorn

    from modelserver.server import create_app

    port = free_port()
    app = create_app(config)
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error"))
    threading.Thread(target=server.run, daemon=True).start()
    base_url = f"http://127.0.0.1:{port}"
    deadline = time.monotonic() + timeout
    status = "unreachable"
    while time.monotonic() < deadline:
        try:
            body = requests.get(base_url + "/health", timeout=2).json()
            status = body["status"]
            if status in ("ok", "error"):
                break
        except requests.RequestException:
            pass
        time.sleep(0.1)
    if status != "ok":
        server.should_exit = True
        raise RuntimeError(f"server did not become ready: {status}")
    return base_url, server


@pytest.fixture(scope="session")
def running_server(server_config):
    base_url, server = start_server(server_config)
    yield base_url
    server.should_exit = True
