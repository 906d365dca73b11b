import json
import random

import numpy as np
import pytest

from cofe import backends
from cofe.backends import BackendEndpoint, cosine, embed_texts, get_client, mock_endpoint
from cofe.chunking import DocumentText
from cofe.dataset import EvalExample, QueryType
from cofe.errors import DataError
from cofe.pipeline import (
    EmbeddingCache,
    PipelineConfig,
    build_index,
    generate_stage,
    load_config,
    load_index,
    load_records,
    rerank_stage,
    retrieve,
    run_pipeline,
    save_index,
)

from conftest import make_chunk


def chunks_of(*texts):
    return [make_chunk(f"c{i:03d}", t) for i, t in enumerate(texts)]


def test_config_invariants():
    with pytest.raises(DataError):
        PipelineConfig(rerank_k=40, retrieve_k=30)
    with pytest.raises(DataError):
        PipelineConfig(chunk_size=100, overlap=100)
    with pytest.raises(DataError):
        PipelineConfig(retrieve_k=0)
    assert PipelineConfig().chunk_size == 512
    assert PipelineConfig().overlap == 100
    assert PipelineConfig().retrieve_k == 30
    assert PipelineConfig().rerank_k == 4


def test_config_toml_and_overrides(tmp_path):
    cfg = tmp_path / "cofe.toml"
    cfg.write_text(
        """
[chunking]
chunk_size = 256
overlap = 50

[retrieval]
retrieve_k = 10

[reranking]
rerank_k = 2

[generation]
prompt_template_id = "rag-v1"

[backends.embed]
base_url = "mock"
model_id = "my-embed"
max_batch = 8
""",
        encoding="utf-8",
    )
    config = load_config(cfg)
    assert config.chunk_size == 256 and config.overlap == 50
    assert config.retrieve_k == 10 and config.rerank_k == 2
    assert config.embed.model_id == "my-embed" and config.embed.max_batch == 8
    override = load_config(cfg, chunk_size=128, overlap=25)
    assert override.chunk_size == 128 and override.overlap == 25


def test_build_index_mock_contract():
    index = build_index(chunks_of("alpha", "beta", "alpha"), mock_endpoint("embed"))
    assert index.matrix.shape == (3, 256)
    assert index.dim == 256
    norms = np.linalg.norm(index.matrix, axis=1)
    assert np.allclose(norms, 1.0)
    # identical text -> identical vector
    assert (index.matrix[0] == index.matrix[2]).all()


def test_build_index_rejects_duplicate_ids():
    c = make_chunk("same", "text")
    with pytest.raises(DataError, match="duplicate"):
        build_index([c, c], mock_endpoint("embed"))


def test_warm_cache_issues_zero_embed_calls(tmp_path):
    ep = BackendEndpoint(kind="embed", base_url="mock", model_id="cache-test-model")
    cache_path = tmp_path / "embeddings.cache"
    chunks = chunks_of("alpha beta", "gamma delta", "epsilon")
    client = get_client(ep)

    before = client.calls
    build_index(chunks, ep, EmbeddingCache(cache_path))
    assert client.calls > before

    warm = client.calls
    index = build_index(chunks, ep, EmbeddingCache(cache_path))
    assert client.calls == warm  # every vector came from the cache
    assert index.matrix.shape == (3, 256)


def test_retrieve_exhaustive_cosine_order():
    texts = ["alpha beta", "alpha", "gamma"]
    index = build_index(chunks_of(*texts), mock_endpoint("embed"))
    got = retrieve(index, "alpha beta", mock_endpoint("embed"), 3)
    # oracle: rank by directly computed cosine over all three chunks
    qv = embed_texts(mock_endpoint("embed"), ["alpha beta"])[0]
    want = sorted(
        ((cid, cosine(embed_texts(mock_endpoint("embed"), [t])[0], qv)) for cid, t in zip(["c000", "c001", "c002"], texts)),
        key=lambda p: (-p[1], p[0]),
    )
    assert [cid for cid, _ in got] == [cid for cid, _ in want] == ["c000", "c001", "c002"]
    for (gc, gs), (wc, ws) in zip(got, want):
        assert gs == pytest.approx(ws, abs=1e-12)


def test_retrieve_k_exceeding_corpus_returns_all():
    index = build_index(chunks_of(*[f"text {i}" for i in range(10)]), mock_endpoint("embed"))
    assert len(retrieve(index, "text", mock_endpoint("embed"), 30)) == 10


def test_retrieve_ties_break_by_chunk_id():
    index = build_index(chunks_of("same words", "same words"), mock_endpoint("embed"))
    got = retrieve(index, "same", mock_endpoint("embed"), 2)
    assert [cid for cid, _ in got] == ["c000", "c001"]
    assert got[0][1] == got[1][1]


def test_retrieve_insertion_order_invariance():
    a = chunks_of("alpha beta", "gamma delta", "alpha gamma")
    index1 = build_index(a, mock_endpoint("embed"))
    index2 = build_index(list(reversed(a)), mock_endpoint("embed"))
    q = "alpha"
    assert retrieve(index1, q, mock_endpoint("embed"), 3) == retrieve(index2, q, mock_endpoint("embed"), 3)


def test_rerank_stage_contracts():
    chunks = chunks_of("intelligent cars report", "cars only", "nothing here", "intelligent stuff")
    got = rerank_stage("intelligent cars", chunks, mock_endpoint("rerank"), 2)
    assert len(got) == 2
    assert got[0][0] == "c000" and got[0][1] == 1.0
    # k exceeding candidates re-orders everything
    all4 = rerank_stage("intelligent cars", chunks, mock_endpoint("rerank"), 99)
    assert len(all4) == 4
    assert rerank_stage("q", [], mock_endpoint("rerank"), 3) == []


def test_generate_stage_template_contract(monkeypatch):
    seen = {}

    def capture(ep, prompt, max_tokens=None):
        seen["prompt"] = prompt
        return "answer"

    monkeypatch.setattr("cofe.pipeline.backends.generate", capture)
    chunks = chunks_of("first chunk", "second chunk")
    generate_stage("why?", chunks, mock_endpoint("generate"))
    assert seen["prompt"] == "Context:\n[1] first chunk\n[2] second chunk\nQuestion: why?\nAnswer:"
    generate_stage("why?", [], mock_endpoint("generate"))
    assert seen["prompt"] == "Context:\n(none)\nQuestion: why?\nAnswer:"


def test_generate_stage_unknown_template():
    with pytest.raises(DataError, match="unknown template"):
        generate_stage("q", [], mock_endpoint("generate"), template_id="nope-v9")


def test_generate_stage_mock_returns_joined_chunks():
    chunks = chunks_of("first chunk", "second chunk")
    assert generate_stage("why?", chunks, mock_endpoint("generate")) == "first chunk\nsecond chunk"


def test_index_round_trip(tmp_path):
    index = build_index(chunks_of("alpha", "beta"), mock_endpoint("embed"))
    save_index(index, tmp_path / "index.json")
    loaded = load_index(tmp_path / "index.json")
    assert loaded.chunk_ids == index.chunk_ids
    assert loaded.dim == index.dim
    assert np.allclose(loaded.matrix, index.matrix, atol=1e-12)


# -- end-to-end ---------------------------------------------------------------


def toy_inputs(n_docs=6, n_examples=8, seed=11):
    rng = random.Random(seed)
    words = "alpha beta gamma delta epsilon zeta eta theta iota kappa".split()
    docs = []
    for d in range(n_docs):
        body = " ".join(rng.choice(words) for _ in range(120))
        docs.append(DocumentText(doc_id=f"doc{d}", body=body))
    examples = []
    types = list(QueryType)
    for i in range(n_examples):
        doc = docs[i % n_docs]
        toks = doc.body.split()
        span = " ".join(toks[3:6])
        examples.append(
            EvalExample(
                id=f"ex{i}",
                query_type=types[i % 4],
                query=f"what about {toks[0]} and {toks[1]}?",
                reference_answer=" ".join(toks[:12]),
                coarse_keywords=(toks[2],),
                fine_keywords=((span,), (toks[7],)),
                language="en",
            )
        )
    return examples, docs


def small_config(**kw):
    defaults = dict(chunk_size=16, overlap=4, retrieve_k=5, rerank_k=2, workers=2)
    defaults.update(kw)
    return PipelineConfig(**defaults)


def test_run_pipeline_writes_run_dir(tmp_path):
    examples, docs = toy_inputs()
    manifest, records = run_pipeline(examples, docs, small_config(), tmp_path / "run")
    assert (tmp_path / "run" / "manifest.json").exists()
    assert (tmp_path / "run" / "chunks.jsonl").exists()
    assert (tmp_path / "run" / "dataset.jsonl").exists()
    assert (tmp_path / "run" / "embeddings.cache").exists()
    assert len(records) == len(examples)
    assert manifest.run_id.startswith("run-")
    assert manifest.tokenizer_id == "unicode-rule-v1"


def test_run_records_contracts(tmp_path):
    examples, docs = toy_inputs()
    _, records = run_pipeline(examples, docs, small_config(), tmp_path / "run")
    for rec in records:
        assert len(rec.retrieved) <= 5
        assert len(rec.reranked) == 2
        retrieved_ids = {cid for cid, _ in rec.retrieved}
        assert {cid for cid, _ in rec.reranked} <= retrieved_ids
        for pairs in (rec.retrieved, rec.reranked):
            scores = [s for _, s in pairs]
            assert scores == sorted(scores, reverse=True)


def test_run_pipeline_deterministic_bytes(tmp_path):
    examples, docs = toy_inputs()
    run_pipeline(examples, docs, small_config(), tmp_path / "r1")
    run_pipeline(examples, docs, small_config(), tmp_path / "r2")
    assert (tmp_path / "r1" / "records.jsonl").read_bytes() == (
        tmp_path / "r2" / "records.jsonl"
    ).read_bytes()


def test_run_pipeline_resume_skips_done(tmp_path):
    examples, docs = toy_inputs()
    out = tmp_path / "run"
    run_pipeline(examples, docs, small_config(), out)
    full = (out / "records.jsonl").read_bytes()

    # simulate an interrupted run: keep the first 3 records plus a torn line
    lines = full.decode("utf-8").splitlines(keepends=True)
    (out / "records.jsonl").write_text("".join(lines[:3]) + '{"example_id": "ex3", "ret', "utf-8")

    embed_client = get_client(small_config().embed)
    calls_before = embed_client.calls
    _, records = run_pipeline(examples, docs, small_config(), out)
    assert (out / "records.jsonl").read_bytes() == full
    assert len(records) == len(examples)
    # warm cache: resume re-embeds nothing, only queries hit the backend
    assert embed_client.calls - calls_before == len(examples) - 3


def test_run_pipeline_refuses_mismatched_run_dir(tmp_path):
    examples, docs = toy_inputs()
    out = tmp_path / "run"
    run_pipeline(examples, docs, small_config(), out)
    with pytest.raises(DataError, match="refusing"):
        run_pipeline(examples, docs, small_config(retrieve_k=4, rerank_k=2), out)


def test_records_have_no_timing_fields(tmp_path):
    examples, docs = toy_inputs()
    out = tmp_path / "run"
    run_pipeline(examples, docs, small_config(), out)
    with (out / "records.jsonl").open() as f:
        for line in f:
            assert set(json.loads(line)) == {"example_id", "retrieved", "reranked", "generated_answer"}
    assert (out / "timings.jsonl").exists()


def test_load_records_rejects_mid_file_corruption(tmp_path):
    p = tmp_path / "records.jsonl"
    p.write_text('{"bad": true}\n{"example_id": "e", "retrieved": [], "reranked": [], "generated_answer": ""}\n')
    with pytest.raises(DataError, match=":1"):
        load_records(p, tolerate_torn_tail=True)
