"""Command-line entry point.

Subcommands: chunk, index, run, eval-retrieval, eval-generation, construct,
report, sweep, serve-mock. A TOML config supplies defaults, flags override
it, and every backend falls back to the built-in deterministic mock. Exit
codes: 0 success, 1 usage, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import construct as construct_mod
from . import gen_metrics, keyword_metrics, mockserver, report as report_mod
from .chunking import chunk_corpus, load_corpus
from .dataset import load_dataset
from .errors import BackendError, DataError
from .pipeline import (
    SWEEP_PRESETS,
    EmbeddingCache,
    build_index,
    load_chunks,
    load_config,
    load_manifest,
    load_records,
    run_pipeline,
    save_index,
    write_chunks,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cofe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--workers", type=int, help="parallel example workers")
        p.add_argument("--seed", type=int, help="seed recorded in the run manifest")
        return p

    p = add("chunk", "split a corpus into chunks.jsonl")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--overlap", type=int)

    p = add("index", "chunk a corpus and build the embedding index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--overlap", type=int)

    p = add("run", "run the full pipeline over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--retrieve-k", type=int)
    p.add_argument("--rerank-k", type=int)

    p = add("eval-retrieval", "score a run's retrieved or reranked chunks")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--stage", choices=("retrieved", "reranked"), default="retrieved")

    p = add("eval-generation", "score a run's generated answers")
    p.add_argument("--run", required=True, help="run directory")

    p = add("construct", "generate benchmark candidates and apply reviews")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-size", type=int, help="fragment size in tokens (default 3000)")

    p = add("report", "assemble report.json and report.md for a run")
    p.add_argument("--run", required=True, help="run directory")

    p = add("sweep", "run the pipeline at several chunk sizes and export sweep.csv")
    p.add_argument("--sizes", required=True, help="comma-separated chunk sizes, e.g. 128,256,512")
    p.add_argument("--dataset", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--retrieve-k", type=int)

    p = add("serve-mock", "serve the mock backends over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)

    return parser


def _config_from_args(args, **extra):
    overrides = dict(extra)
    for flag, key in (
        ("chunk_size", "chunk_size"),
        ("overlap", "overlap"),
        ("retrieve_k", "retrieve_k"),
        ("rerank_k", "rerank_k"),
        ("workers", "workers"),
        ("seed", "seed"),
    ):
        if getattr(args, flag, None) is not None:
            overrides[key] = getattr(args, flag)
    return load_config(args.config, **overrides)


def _cmd_chunk(args) -> int:
    config = _config_from_args(args)
    docs = load_corpus(args.corpus)
    chunks = chunk_corpus(docs, config.chunk_size, config.overlap)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_chunks(chunks, out / "chunks.jsonl")
    print(f"wrote {len(chunks)} chunks from {len(docs)} documents to {out / 'chunks.jsonl'}")
    return EXIT_OK


def _cmd_index(args) -> int:
    config = _config_from_args(args)
    docs = load_corpus(args.corpus)
    chunks = chunk_corpus(docs, config.chunk_size, config.overlap)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_chunks(chunks, out / "chunks.jsonl")
    cache = EmbeddingCache(out / "embeddings.cache")
    index = build_index(chunks, config.embed, cache)
    save_index(index, out / "index.json")
    print(f"indexed {len(chunks)} chunks (dim {index.dim}) into {out / 'index.json'}")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = _config_from_args(args)
    examples = load_dataset(args.dataset)
    docs = load_corpus(args.corpus)
    manifest, records = run_pipeline(examples, docs, config, args.out)
    print(f"{manifest.run_id}: {len(records)} records in {args.out}")
    return EXIT_OK


def _load_run(run_dir: str):
    run = Path(run_dir)
    manifest = load_manifest(run)
    examples = load_dataset(run / "dataset.jsonl")
    chunks = {c.chunk_id: c for c in load_chunks(run / "chunks.jsonl")}
    records_path = run / "records.jsonl"
    if not records_path.exists():
        raise DataError(f"no records.jsonl in {run}; run the pipeline first")
    records = {r.example_id: r for r in load_records(records_path)}
    return run, manifest, examples, chunks, records


def _cmd_eval_retrieval(args) -> int:
    run, manifest, examples, chunks, records = _load_run(args.run)
    chunk_lists = {}
    for ex in examples:
        rec = records.get(ex.id)
        if rec is None:
            raise DataError(f"run is missing a record for example {ex.id!r}")
        pairs = rec.retrieved if args.stage == "retrieved" else rec.reranked
        chunk_lists[ex.id] = [chunks[cid] for cid, _ in pairs]
    evals, metrics = keyword_metrics.evaluate_retrieval(examples, chunk_lists)

    evals_path = run / f"evals_{args.stage}.jsonl"
    with evals_path.open("w", encoding="utf-8") as f:
        for e in evals:
            f.write(json.dumps(keyword_metrics.eval_to_dict(e), ensure_ascii=False) + "\n")
    metrics_path = run / f"metrics_{args.stage}.json"
    payload = {
        "run_id": manifest.run_id,
        "stage": args.stage,
        "metrics": keyword_metrics.stage_metrics_to_dict(metrics),
    }
    metrics_path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    o = metrics.overall
    print(
        f"{args.stage}: recall {o.recall:.4f} accuracy {o.accuracy:.4f} "
        f"({o.examples} examples, {metrics.skipped} skipped) -> {metrics_path.name}"
    )
    return EXIT_OK


def _cmd_eval_generation(args) -> int:
    run, manifest, examples, chunks, records = _load_run(args.run)
    config = _config_from_args(args)

    def eval_one(ex):
        rec = records.get(ex.id)
        if rec is None:
            raise DataError(f"run is missing a record for example {ex.id!r}")
        context = [chunks[cid] for cid, _ in rec.reranked]
        return gen_metrics.evaluate_answer(ex, rec.generated_answer, context, config.judge)

    with ThreadPoolExecutor(max_workers=config.effective_workers()) as pool:
        evals = list(pool.map(eval_one, examples))

    with (run / "gen_evals.jsonl").open("w", encoding="utf-8") as f:
        for e in evals:
            f.write(json.dumps(gen_metrics.gen_eval_to_dict(e), ensure_ascii=False) + "\n")
    metrics = gen_metrics.aggregate_generation(evals, examples)
    payload = {
        "run_id": manifest.run_id,
        "metrics": gen_metrics.generation_metrics_to_dict(metrics),
    }
    metrics_path = run / "metrics_generation.json"
    metrics_path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    o = metrics.overall
    print(
        f"generation: bleu {o.bleu:.4f} rouge-l {o.rouge_l_f1:.4f} pass {o.pass_rate:.4f} "
        f"score {o.score:.4f} -> {metrics_path.name}"
    )
    return EXIT_OK


def _cmd_construct(args) -> int:
    # --chunk-size is the fragment size here, not a pipeline chunking override
    config = load_config(args.config, workers=args.workers, seed=args.seed)
    docs = load_corpus(args.corpus)
    fragment_size = args.chunk_size or construct_mod.DEFAULT_FRAGMENT_SIZE
    summary = construct_mod.run_construction(docs, config.generate, args.out, fragment_size)
    line = f"construct: {summary['new_candidates']} new candidates in {args.out}"
    if "review" in summary:
        line += f"; accepted {summary['review']['accepted']} of {summary['review']['reviewed']} reviewed"
    print(line)
    return EXIT_OK


def _write_report(run_dir: Path) -> report_mod.Report:
    rep = report_mod.build_report(run_dir)
    (run_dir / "report.json").write_text(
        json.dumps(report_mod.report_to_dict(rep), indent=2, sort_keys=True, ensure_ascii=False),
        encoding="utf-8",
    )
    (run_dir / "report.md").write_text(report_mod.render_markdown(rep), encoding="utf-8")
    return rep


def _cmd_report(args) -> int:
    rep = _write_report(Path(args.run))
    print(f"report for {rep.run_id}: sections {sorted(rep.sections)} -> {args.run}/report.json")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise DataError(f"--sizes must be comma-separated integers, got {args.sizes!r}")
    if len(sizes) < 2:
        raise DataError("--sizes needs at least two chunk sizes")
    for size in sizes:
        if size not in SWEEP_PRESETS:
            raise DataError(
                f"no overlap/rerank_k preset for chunk size {size}; presets: {sorted(SWEEP_PRESETS)}"
            )

    base = _config_from_args(args)
    examples = load_dataset(args.dataset)
    docs = load_corpus(args.corpus)
    out = Path(args.out)
    reports = []
    for size in sizes:
        overlap, rerank_k = SWEEP_PRESETS[size]
        config = replace(base, chunk_size=size, overlap=overlap, rerank_k=rerank_k)
        run_dir = out / f"size-{size}"
        run_pipeline(examples, docs, config, run_dir)
        ns = argparse.Namespace(**{**vars(args), "run": str(run_dir)})
        for stage in ("retrieved", "reranked"):
            _cmd_eval_retrieval(argparse.Namespace(**{**vars(ns), "stage": stage}))
        _cmd_eval_generation(ns)
        reports.append(_write_report(run_dir))

    _, csv_text = report_mod.export_sweep(reports)
    (out / "sweep.csv").write_text(csv_text, encoding="utf-8")
    print(f"sweep over sizes {sizes} -> {out / 'sweep.csv'}")
    return EXIT_OK


def _cmd_serve_mock(args) -> int:
    mockserver.serve_forever(args.host, args.port)
    return EXIT_OK


_COMMANDS = {
    "chunk": _cmd_chunk,
    "index": _cmd_index,
    "run": _cmd_run,
    "eval-retrieval": _cmd_eval_retrieval,
    "eval-generation": _cmd_eval_generation,
    "construct": _cmd_construct,
    "report": _cmd_report,
    "sweep": _cmd_sweep,
    "serve-mock": _cmd_serve_mock,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.subcommand](args)
    except BackendError as e:
        print(f"cofe: backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except DataError as e:
        print(f"cofe: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"cofe: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
