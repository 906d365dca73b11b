"""FastAPI app implementing the native wire protocol over local models.

Routes: POST /embed, /rerank, /generate; GET /health. Models load in a
background thread after startup, so /health reports "loading" until the
registry is ready (model routes answer 503 meanwhile) and "error" if any
model failed to load. Unknown model ids, or ids of the wrong kind for a
route, get a 404 with {"error": "unknown model"}; every error body carries
an "error" field per the protocol.
"""

from __future__ import annotations

import argparse
import sys
import threading
from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import ServerConfig, load_config
from .models import load_backend


class EmbedRequest(BaseModel):
    model: str
    texts: list[str]


class RerankRequest(BaseModel):
    model: str
    query: str
    documents: list[str]


class GenerateRequest(BaseModel):
    model: str
    prompt: str
    max_tokens: Optional[int] = None


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(config: ServerConfig, load_in_background: bool = True) -> FastAPI:
    state = {"status": "loading", "backends": {}, "detail": ""}

    def load_all():
        try:
            for model_id, spec in config.models.items():
                state["backends"][model_id] = load_backend(spec, config.max_batch)
            state["status"] = "ok"
        except Exception as e:  # surface load failures through /health
            state["status"] = "error"
            state["detail"] = f"{type(e).__name__}: {e}"

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if load_in_background:
            threading.Thread(target=load_all, daemon=True).start()
        else:
            load_all()
        yield

    app = FastAPI(lifespan=lifespan)
    app.state.registry = state

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return _error(400, f"malformed request body: {exc.errors()[:1]}")

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception):
        return _error(500, f"{type(exc).__name__}: {exc}")

    def backend_for(model_id: str, kind: str):
        if state["status"] == "loading":
            return _error(503, "models are still loading")
        if state["status"] == "error":
            return _error(503, f"model load failed: {state['detail']}")
        backend = state["backends"].get(model_id)
        if backend is None or backend.kind != kind:
            return _error(404, "unknown model")
        return backend

    @app.post("/embed")
    def embed(req: EmbedRequest):
        backend = backend_for(req.model, "embed")
        if isinstance(backend, JSONResponse):
            return backend
        if not req.texts:
            return _error(400, "'texts' must be a non-empty list of strings")
        return {"vectors": backend.embed(req.texts)}

    @app.post("/rerank")
    def rerank(req: RerankRequest):
        backend = backend_for(req.model, "rerank")
        if isinstance(backend, JSONResponse):
            return backend
        if not req.documents:
            return _error(400, "'documents' must be a non-empty list of strings")
        return {"scores": backend.score(req.query, req.documents)}

    @app.post("/generate")
    def generate(req: GenerateRequest):
        backend = backend_for(req.model, "generate")
        if isinstance(backend, JSONResponse):
            return backend
        return {"text": backend.generate(req.prompt, req.max_tokens)}

    @app.get("/health")
    def health():
        body = {"status": state["status"], "models": sorted(state["backends"])}
        if state["detail"]:
            body["detail"] = state["detail"]
        return body

    return app


def serve(config: ServerConfig) -> None:
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cofe-modelserver", description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True, help="JSON config with the model registry")
    parser.add_argument("--host")
    parser.add_argument("--port", type=int)
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except ValueError as e:
        print(f"cofe-modelserver: {e}", file=sys.stderr)
        return 2
    if args.host or args.port:
        from dataclasses import replace

        config = replace(
            config, host=args.host or config.host, port=args.port or config.port
        )
    print(f"serving {sorted(config.models)} on http://{config.host}:{config.port}")
    serve(config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
