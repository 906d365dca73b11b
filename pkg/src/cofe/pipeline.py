"""Four-stage pipeline orchestration: chunk, retrieve, rerank, generate.

A run directory is self-contained: manifest.json (config + content
fingerprints), dataset.jsonl (canonical copy), chunks.jsonl, an append-only
embeddings.cache, records.jsonl (one trace per example), and timings.jsonl.
Records carry no wall-clock data, so runs with mock backends are byte-stable;
interrupted runs resume by skipping example ids already present.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import TOKENIZER_ID, backends
from .backends import BackendEndpoint, mock_endpoint
from .chunking import Chunk, DocumentText, chunk_corpus, chunk_from_dict, chunk_to_dict
from .dataset import EvalExample, dataset_fingerprint, dump_dataset
from .errors import DataError
from .prompts import render_context_block, render_template, template_hash

SWEEP_PRESETS = {128: (25, 16), 256: (50, 8), 512: (100, 4)}

_SCORE_DECIMALS = 12  # serialized score precision in records.jsonl


@dataclass(frozen=True)
class PipelineConfig:
    chunk_size: int = 512
    overlap: int = 100
    retrieve_k: int = 30
    rerank_k: int = 4
    prompt_template_id: str = "rag-v1"
    query_prefix: str = ""
    max_tokens: Optional[int] = None
    workers: int = 0  # 0 = logical CPU count
    seed: int = 0
    embed: BackendEndpoint = field(default_factory=lambda: mock_endpoint("embed"))
    rerank: BackendEndpoint = field(default_factory=lambda: mock_endpoint("rerank"))
    generate: BackendEndpoint = field(default_factory=lambda: mock_endpoint("generate"))
    judge: BackendEndpoint = field(default_factory=lambda: mock_endpoint("generate"))

    def __post_init__(self):
        if self.chunk_size < 1:
            raise DataError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if not 0 <= self.overlap < self.chunk_size:
            raise DataError(f"overlap must satisfy 0 <= overlap < chunk_size, got {self.overlap}")
        if self.retrieve_k < 1 or self.rerank_k < 1:
            raise DataError("retrieve_k and rerank_k must be >= 1")
        if self.rerank_k > self.retrieve_k:
            raise DataError(f"rerank_k ({self.rerank_k}) must be <= retrieve_k ({self.retrieve_k})")

    def effective_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def to_dict(self) -> dict:
        def ep(e: BackendEndpoint) -> dict:
            return {
                "kind": e.kind,
                "base_url": e.base_url,
                "model_id": e.model_id,
                "timeout": e.timeout,
                "max_parallel_requests": e.max_parallel_requests,
                "max_batch": e.max_batch,
                "protocol": e.protocol,
            }

        return {
            "chunk_size": self.chunk_size,
            "overlap": self.overlap,
            "retrieve_k": self.retrieve_k,
            "rerank_k": self.rerank_k,
            "prompt_template_id": self.prompt_template_id,
            "query_prefix": self.query_prefix,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
            "backends": {
                "embed": ep(self.embed),
                "rerank": ep(self.rerank),
                "generate": ep(self.generate),
                "judge": ep(self.judge),
            },
        }


def _endpoint_from_dict(kind: str, obj: dict) -> BackendEndpoint:
    return BackendEndpoint(
        kind=obj.get("kind", kind),
        base_url=obj.get("base_url", backends.MOCK_URL),
        model_id=obj.get("model_id", f"mock-{kind}"),
        timeout=float(obj.get("timeout", 30.0)),
        max_parallel_requests=int(obj.get("max_parallel_requests", 4)),
        max_batch=int(obj.get("max_batch", 16)),
        protocol=obj.get("protocol", "native"),
    )


def load_config(path: Optional[str | Path] = None, **overrides) -> PipelineConfig:
    """Build a config from an optional TOML file plus keyword overrides
    (flags beat file values; every backend defaults to the mock)."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"config not found: {p}")
        with p.open("rb") as f:
            try:
                raw = tomllib.load(f)
            except tomllib.TOMLDecodeError as e:
                raise DataError(f"{p}: invalid TOML: {e}") from e

    chunking = raw.get("chunking", {})
    retrieval = raw.get("retrieval", {})
    reranking = raw.get("reranking", {})
    generation = raw.get("generation", {})
    eps = raw.get("backends", {})

    values = {
        "chunk_size": chunking.get("chunk_size", 512),
        "overlap": chunking.get("overlap", 100),
        "retrieve_k": retrieval.get("retrieve_k", 30),
        "query_prefix": retrieval.get("query_prefix", ""),
        "rerank_k": reranking.get("rerank_k", 4),
        "prompt_template_id": generation.get("prompt_template_id", "rag-v1"),
        "max_tokens": generation.get("max_tokens"),
        "workers": raw.get("workers", 0),
        "seed": raw.get("seed", 0),
        "embed": _endpoint_from_dict("embed", eps.get("embed", {})),
        "rerank": _endpoint_from_dict("rerank", eps.get("rerank", {})),
        "generate": _endpoint_from_dict("generate", eps.get("generate", {})),
        "judge": _endpoint_from_dict("generate", eps.get("judge", {})),
    }
    for key, val in overrides.items():
        if val is not None:
            values[key] = val
    return PipelineConfig(**values)


# -- vector index and embedding cache ----------------------------------------


@dataclass
class VectorIndex:
    chunk_ids: list[str]
    matrix: np.ndarray  # (n, dim) float64, rows L2-normalized or zero
    dim: int
    fingerprint: str


class EmbeddingCache:
    """Append-only JSONL store keyed by (model_id, sha256 of text)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._mem: dict[str, list[float]] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with self.path.open(encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    try:
                        obj = json.loads(line)
                        self._mem[obj["k"]] = obj["v"]
                    except (json.JSONDecodeError, KeyError):
                        continue  # torn tail write from an interrupted run

    @staticmethod
    def key(model_id: str, text: str) -> str:
        return model_id + ":" + hashlib.sha256(text.encode("utf-8")).hexdigest()

    def get(self, model_id: str, text: str) -> Optional[np.ndarray]:
        v = self._mem.get(self.key(model_id, text))
        return None if v is None else np.asarray(v, dtype=np.float64)

    def put(self, model_id: str, text: str, vector: np.ndarray) -> None:
        k = self.key(model_id, text)
        with self._lock:
            if k in self._mem:
                return
            self._mem[k] = [float(x) for x in vector]
            with self.path.open("a", encoding="utf-8") as f:
                f.write(json.dumps({"k": k, "v": self._mem[k]}) + "\n")


def build_index(
    chunks: list[Chunk], ep: BackendEndpoint, cache: Optional[EmbeddingCache] = None
) -> VectorIndex:
    """Embed every chunk (cache hits skip the backend) into an exact-search index."""
    if not chunks:
        raise DataError("cannot build an index from zero chunks")
    ids = [c.chunk_id for c in chunks]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate chunk_ids in index input")

    vectors: dict[int, np.ndarray] = {}
    missing: list[int] = []
    for i, c in enumerate(chunks):
        cached = cache.get(ep.model_id, c.text) if cache is not None else None
        if cached is None:
            missing.append(i)
        else:
            vectors[i] = cached

    if missing:
        batches = [missing[lo : lo + ep.max_batch] for lo in range(0, len(missing), ep.max_batch)]

        def embed_batch(idxs: list[int]) -> list[np.ndarray]:
            out = backends.embed_texts(ep, [chunks[i].text for i in idxs])
            if cache is not None:
                for i, v in zip(idxs, out):
                    cache.put(ep.model_id, chunks[i].text, v)
            return out

        with ThreadPoolExecutor(max_workers=ep.max_parallel_requests) as pool:
            for idxs, out in zip(batches, pool.map(embed_batch, batches)):
                for i, v in zip(idxs, out):
                    vectors[i] = v

    dims = {v.shape[0] for v in vectors.values()}
    if len(dims) != 1:
        raise DataError(f"inconsistent vector dimensions in index: {sorted(dims)}")
    dim = dims.pop()
    matrix = np.stack([vectors[i] for i in range(len(chunks))])
    return VectorIndex(
        chunk_ids=ids,
        matrix=matrix,
        dim=dim,
        fingerprint=f"{ep.protocol}:{ep.model_id}:dim{dim}",
    )


def retrieve(
    index: VectorIndex, query: str, ep: BackendEndpoint, k: int
) -> list[tuple[str, float]]:
    """Top-k chunks by cosine, descending; ties break by ascending chunk_id."""
    if k < 1:
        raise DataError(f"retrieve k must be >= 1, got {k}")
    qv = backends.embed_texts(ep, [query])[0]
    if qv.shape[0] != index.dim:
        raise DataError(f"query dim {qv.shape[0]} != index dim {index.dim}")
    scores = index.matrix @ qv
    order = sorted(range(len(index.chunk_ids)), key=lambda i: (-scores[i], index.chunk_ids[i]))
    return [(index.chunk_ids[i], float(scores[i])) for i in order[:k]]


def rerank_stage(
    query: str, retrieved: list[Chunk], ep: BackendEndpoint, k: int
) -> list[tuple[str, float]]:
    """Re-score the retrieved chunks and keep the top-k, ties by chunk_id."""
    if k < 1:
        raise DataError(f"rerank k must be >= 1, got {k}")
    if not retrieved:
        return []
    scores = backends.rerank(ep, query, retrieved)
    ranked = sorted(zip(retrieved, scores), key=lambda cs: (-cs[1], cs[0].chunk_id))
    return [(c.chunk_id, float(s)) for c, s in ranked[:k]]


def generate_stage(
    query: str,
    final_chunks: list[Chunk],
    ep: BackendEndpoint,
    template_id: str = "rag-v1",
    max_tokens: Optional[int] = None,
) -> str:
    context = render_context_block([c.text for c in final_chunks])
    prompt = render_template(template_id, context=context, query=query)
    return backends.generate(ep, prompt, max_tokens)


# -- run records and manifests ------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    example_id: str
    retrieved: list[tuple[str, float]]
    reranked: list[tuple[str, float]]
    generated_answer: str
    timings_ms: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    created_at: str
    config: dict
    dataset_fingerprint: str
    corpus_fingerprint: str
    tokenizer_id: str
    template_hashes: dict[str, str]


def corpus_fingerprint(docs: Iterable[DocumentText]) -> str:
    h = hashlib.sha256()
    for d in docs:
        h.update(
            json.dumps(
                {"doc_id": d.doc_id, "title": d.title, "body": d.body, "fmt": d.source_format},
                ensure_ascii=False,
                sort_keys=True,
            ).encode("utf-8")
        )
        h.update(b"\n")
    return h.hexdigest()


def compute_run_id(dataset_fp: str, corpus_fp: str, config: PipelineConfig) -> str:
    blob = json.dumps(
        {"dataset": dataset_fp, "corpus": corpus_fp, "config": config.to_dict()}, sort_keys=True
    )
    return "run-" + hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def record_to_dict(rec: RunRecord) -> dict:
    # timings are wall-clock and live in timings.jsonl, keeping this file
    # byte-stable across reruns
    return {
        "example_id": rec.example_id,
        "retrieved": [[cid, round(s, _SCORE_DECIMALS)] for cid, s in rec.retrieved],
        "reranked": [[cid, round(s, _SCORE_DECIMALS)] for cid, s in rec.reranked],
        "generated_answer": rec.generated_answer,
    }


def record_from_dict(obj: dict) -> RunRecord:
    return RunRecord(
        example_id=obj["example_id"],
        retrieved=[(cid, float(s)) for cid, s in obj["retrieved"]],
        reranked=[(cid, float(s)) for cid, s in obj["reranked"]],
        generated_answer=obj["generated_answer"],
    )


def load_records(path: str | Path, tolerate_torn_tail: bool = False) -> list[RunRecord]:
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as f:
        lines = f.readlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(record_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as e:
            if tolerate_torn_tail and lineno == len(lines):
                break  # interrupted mid-append; the example will be redone
            raise DataError(f"{path}:{lineno}: malformed run record: {e}") from e
    return records


def load_chunks(path: str | Path) -> list[Chunk]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"chunks file not found: {path}")
    chunks = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                chunks.append(chunk_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as e:
                raise DataError(f"{path}:{lineno}: malformed chunk: {e}") from e
    return chunks


def save_index(index: VectorIndex, path: str | Path) -> None:
    payload = {
        "dim": index.dim,
        "fingerprint": index.fingerprint,
        "entries": [
            [cid, [round(float(x), _SCORE_DECIMALS) for x in row]]
            for cid, row in zip(index.chunk_ids, index.matrix)
        ],
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_index(path: str | Path) -> VectorIndex:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    ids = [e[0] for e in obj["entries"]]
    matrix = np.asarray([e[1] for e in obj["entries"]], dtype=np.float64)
    return VectorIndex(chunk_ids=ids, matrix=matrix, dim=int(obj["dim"]), fingerprint=obj["fingerprint"])


def _manifest_to_dict(m: RunManifest) -> dict:
    return {
        "run_id": m.run_id,
        "created_at": m.created_at,
        "config": m.config,
        "dataset_fingerprint": m.dataset_fingerprint,
        "corpus_fingerprint": m.corpus_fingerprint,
        "tokenizer_id": m.tokenizer_id,
        "template_hashes": m.template_hashes,
    }


def load_manifest(run_dir: str | Path) -> RunManifest:
    path = Path(run_dir) / "manifest.json"
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    obj = json.loads(path.read_text(encoding="utf-8"))
    return RunManifest(
        run_id=obj["run_id"],
        created_at=obj["created_at"],
        config=obj["config"],
        dataset_fingerprint=obj["dataset_fingerprint"],
        corpus_fingerprint=obj["corpus_fingerprint"],
        tokenizer_id=obj["tokenizer_id"],
        template_hashes=obj.get("template_hashes", {}),
    )


def write_chunks(chunks: list[Chunk], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for c in chunks:
            f.write(json.dumps(chunk_to_dict(c), ensure_ascii=False) + "\n")


def run_pipeline(
    examples: list[EvalExample],
    docs: list[DocumentText],
    config: PipelineConfig,
    out_dir: str | Path,
) -> tuple[RunManifest, list[RunRecord]]:
    """Run retrieve -> rerank -> generate for every example, streaming records.

    Re-invoking with the same inputs and out_dir resumes: examples whose ids
    already appear in records.jsonl are skipped. Invoking with different
    inputs against an existing run directory is refused.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    chunks = chunk_corpus(docs, config.chunk_size, config.overlap)
    if not chunks:
        raise DataError("corpus produced zero chunks")
    by_id = {c.chunk_id: c for c in chunks}

    dataset_fp = dataset_fingerprint(examples)
    corpus_fp = corpus_fingerprint(docs)
    run_id = compute_run_id(dataset_fp, corpus_fp, config)

    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        manifest = load_manifest(out)
        if manifest.run_id != run_id:
            raise DataError(
                f"run directory {out} belongs to {manifest.run_id}, refusing to mix with {run_id}"
            )
    else:
        manifest = RunManifest(
            run_id=run_id,
            created_at=datetime.now(timezone.utc).isoformat(),
            config=config.to_dict(),
            dataset_fingerprint=dataset_fp,
            corpus_fingerprint=corpus_fp,
            tokenizer_id=TOKENIZER_ID,
            template_hashes={
                tid: template_hash(tid)
                for tid in (
                    config.prompt_template_id,
                    "faithfulness-v1",
                    "relevance-v1",
                    "correctness-v1",
                )
            },
        )
        manifest_path.write_text(
            json.dumps(_manifest_to_dict(manifest), indent=2, sort_keys=True), encoding="utf-8"
        )

    chunks_path = out / "chunks.jsonl"
    if not chunks_path.exists():
        write_chunks(chunks, chunks_path)
    dataset_path = out / "dataset.jsonl"
    if not dataset_path.exists():
        dump_dataset(examples, dataset_path)

    cache = EmbeddingCache(out / "embeddings.cache")
    index = build_index(chunks, config.embed, cache)

    records_path = out / "records.jsonl"
    done: list[RunRecord] = []
    if records_path.exists():
        done = load_records(records_path, tolerate_torn_tail=True)
        with records_path.open("w", encoding="utf-8") as f:
            for rec in done:  # rewrite drops any torn tail line
                f.write(json.dumps(record_to_dict(rec), ensure_ascii=False) + "\n")
    done_ids = {r.example_id for r in done}
    todo = [ex for ex in examples if ex.id not in done_ids]

    def process(ex: EvalExample) -> RunRecord:
        t0 = time.monotonic()
        retrieved = retrieve(index, config.query_prefix + ex.query, config.embed, config.retrieve_k)
        t1 = time.monotonic()
        retrieved_chunks = [by_id[cid] for cid, _ in retrieved]
        reranked = rerank_stage(ex.query, retrieved_chunks, config.rerank, config.rerank_k)
        t2 = time.monotonic()
        final_chunks = [by_id[cid] for cid, _ in reranked]
        answer = generate_stage(
            ex.query, final_chunks, config.generate, config.prompt_template_id, config.max_tokens
        )
        t3 = time.monotonic()
        return RunRecord(
            example_id=ex.id,
            retrieved=retrieved,
            reranked=reranked,
            generated_answer=answer,
            timings_ms={
                "retrieve": (t1 - t0) * 1000.0,
                "rerank": (t2 - t1) * 1000.0,
                "generate": (t3 - t2) * 1000.0,
            },
        )

    new_records: list[RunRecord] = []
    if todo:
        timings_path = out / "timings.jsonl"
        with records_path.open("a", encoding="utf-8") as rec_f, timings_path.open(
            "a", encoding="utf-8"
        ) as t_f:
            with ThreadPoolExecutor(max_workers=config.effective_workers()) as pool:
                for rec in pool.map(process, todo):
                    rec_f.write(json.dumps(record_to_dict(rec), ensure_ascii=False) + "\n")
                    rec_f.flush()
                    t_f.write(
                        json.dumps({"example_id": rec.example_id, **rec.timings_ms}) + "\n"
                    )
                    new_records.append(rec)

    by_example = {r.example_id: r for r in done}
    by_example.update({r.example_id: r for r in new_records})
    ordered = [by_example[ex.id] for ex in examples if ex.id in by_example]
    return manifest, ordered
