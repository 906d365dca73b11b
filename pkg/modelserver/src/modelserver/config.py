"""Server configuration: a registry mapping model ids to local models."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

KINDS = ("embed", "rerank", "generate")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str  # embed | rerank | generate
    path: str  # local directory or hub id resolvable by transformers
    device: str = "cpu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if not self.path:
            raise ConfigError("model path must be non-empty")


@dataclass(frozen=True)
class ServerConfig:
    models: dict[str, ModelSpec] = field(default_factory=dict)
    host: str = "127.0.0.1"
    port: int = 9000
    max_batch: int = 16

    def __post_init__(self):
        if not self.models:
            raise ConfigError("model registry is empty: refusing to start with zero models")
        if self.max_batch < 1:
            raise ConfigError("max_batch must be >= 1")
        for model_id in self.models:
            if not model_id:
                raise ConfigError("model ids must be non-empty")


def load_config(path: str | Path) -> ServerConfig:
    """Read a JSON config: {"host"?, "port"?, "max_batch"?, "models": {id: {kind, path, device?}}}."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    models_raw = raw.get("models")
    if not isinstance(models_raw, dict):
        raise ConfigError(f"{path}: 'models' must be an object of model_id -> spec")
    models = {}
    for model_id, spec in models_raw.items():
        if not isinstance(spec, dict):
            raise ConfigError(f"{path}: model {model_id!r}: spec must be an object")
        models[str(model_id)] = ModelSpec(
            kind=spec.get("kind", ""),
            path=spec.get("path", ""),
            device=spec.get("device", "cpu"),
        )
    return ServerConfig(
        models=models,
        host=raw.get("host", "127.0.0.1"),
        port=int(raw.get("port", 9000)),
        max_batch=int(raw.get("max_batch", 16)),
    )
