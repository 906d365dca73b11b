#!/usr/bin/env python3
"""Regenerate the committed golden report for the bundled toy data.

Runs the pipeline on data/toy with all-mock backends, then computes every
metric through the brute-force oracle implementations in tests/oracles.py
(never through the library's metric code), and freezes the results plus a
digest of records.jsonl into tests/data/golden_report.json. The acceptance
suite requires the library-computed report to match these values exactly.
"""

import hashlib
import json
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tests"))

from oracles import oracle_generation_metrics, oracle_stage_metrics  # noqa: E402

from cofe.chunking import load_corpus, tokenize  # noqa: E402
from cofe.dataset import load_dataset, stats_rows, dataset_stats  # noqa: E402
from cofe.pipeline import PipelineConfig, load_chunks, run_pipeline  # noqa: E402


def main():
    examples = load_dataset(REPO / "data/toy/dataset.jsonl")
    docs = load_corpus(REPO / "data/toy/corpus.jsonl")
    config = PipelineConfig()  # defaults: 512/100, top-30, top-4, mocks

    with tempfile.TemporaryDirectory() as td:
        run_dir = Path(td) / "run"
        manifest, records = run_pipeline(examples, docs, config, run_dir)
        records_sha = hashlib.sha256((run_dir / "records.jsonl").read_bytes()).hexdigest()
        chunks = {c.chunk_id: c for c in load_chunks(run_dir / "chunks.jsonl")}

    by_id = {r.example_id: r for r in records}
    retrieved_lists = {ex.id: [chunks[cid] for cid, _ in by_id[ex.id].retrieved] for ex in examples}
    reranked_lists = {ex.id: [chunks[cid] for cid, _ in by_id[ex.id].reranked] for ex in examples}
    answers = {ex.id: by_id[ex.id].generated_answer for ex in examples}
    contexts = {ex.id: [c.text for c in reranked_lists[ex.id]] for ex in examples}

    golden = {
        "run_id": manifest.run_id,
        "dataset_fingerprint": manifest.dataset_fingerprint,
        "records_sha256": records_sha,
        "dataset_stats": {name: count for name, count in stats_rows(dataset_stats(examples))},
        "report": {
            "retrieval": oracle_stage_metrics(examples, retrieved_lists),
            "reranking": oracle_stage_metrics(examples, reranked_lists),
            "generation": oracle_generation_metrics(examples, answers, contexts, tokenize),
        },
    }
    out = REPO / "tests/data/golden_report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(golden, indent=2, sort_keys=True), encoding="utf-8")
    overall = golden["report"]["retrieval"]["overall"]
    print(f"golden written to {out}")
    print(f"  run_id {golden['run_id']}  records sha {records_sha[:12]}…")
    print(f"  retrieval recall {overall['recall']:.4f} accuracy {overall['accuracy']:.4f}")


if __name__ == "__main__":
    main()
