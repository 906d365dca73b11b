"""Assembles per-stage metric files into reports, Markdown tables, sweep CSV.

Metric values render at 4 decimal places. Overall cells come straight from
the metric files (computed over all examples), never re-averaged from the
per-type cells; absent stages and empty type groups stay absent rather than
showing fabricated zeros.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .dataset import QueryType, dataset_stats, load_dataset, stats_rows
from .errors import DataError
from .pipeline import load_manifest

STAGE_FILES = {
    "retrieval": "metrics_retrieved.json",
    "reranking": "metrics_reranked.json",
    "generation": "metrics_generation.json",
}

_TYPE_ORDER = [qt.value for qt in QueryType] + ["Overall"]

GENERATION_COLUMNS = ["BLEU", "Rouge-L", "Faithfulness", "Relevance", "Pass", "Score"]
_GEN_KEYS = ["bleu", "rouge_l", "faithfulness", "relevance", "pass", "score"]


@dataclass(frozen=True)
class Report:
    run_id: str
    dataset_fingerprint: str
    config: dict
    dataset_stats: dict  # type name -> count, plus "Total"
    sections: dict  # stage name -> {"source", "overall", "per_type", ...}


@dataclass(frozen=True)
class SweepSeries:
    # (chunk_size, retrieval accuracy, reranking accuracy, generation BLEU)
    points: list[tuple[int, float, float, float]]


def build_report(run_dir: str | Path) -> Report:
    """Join the run manifest with whichever stage metric files exist.

    A metric file whose run_id does not match the manifest is an error; a
    missing stage is omitted with a warning on stderr.
    """
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    sections: dict = {}
    for stage, filename in STAGE_FILES.items():
        path = run_dir / filename
        if not path.exists():
            print(f"warning: {stage} metrics missing ({path.name}), section omitted", file=sys.stderr)
            continue
        obj = json.loads(path.read_text(encoding="utf-8"))
        if obj.get("run_id") != manifest.run_id:
            raise DataError(
                f"{path.name} belongs to run {obj.get('run_id')!r}, manifest is {manifest.run_id!r}"
            )
        sections[stage] = {"source": filename, **obj["metrics"]}

    examples = load_dataset(run_dir / "dataset.jsonl")
    stats = {name: count for name, count in stats_rows(dataset_stats(examples))}
    return Report(
        run_id=manifest.run_id,
        dataset_fingerprint=manifest.dataset_fingerprint,
        config=manifest.config,
        dataset_stats=stats,
        sections=sections,
    )


def report_to_dict(report: Report) -> dict:
    return {
        "run_id": report.run_id,
        "dataset_fingerprint": report.dataset_fingerprint,
        "config": report.config,
        "dataset_stats": report.dataset_stats,
        "sections": report.sections,
    }


def report_from_dict(obj: dict) -> Report:
    return Report(
        run_id=obj["run_id"],
        dataset_fingerprint=obj["dataset_fingerprint"],
        config=obj["config"],
        dataset_stats=obj["dataset_stats"],
        sections=obj["sections"],
    )


def _fmt(value) -> str:
    return f"{value:.4f}"


def _stage_cell(section: dict, type_name: str) -> dict | None:
    if type_name == "Overall":
        return section.get("overall")
    return section.get("per_type", {}).get(type_name)


def _keyword_stage_table(title: str, run_id: str, section: dict) -> list[str]:
    header = ["Run"]
    for name in _TYPE_ORDER:
        header += [f"{name} Recall", f"{name} Accuracy"]
    row = [run_id]
    for name in _TYPE_ORDER:
        cell = _stage_cell(section, name)
        row += ["—", "—"] if cell is None else [_fmt(cell["recall"]), _fmt(cell["accuracy"])]
    return [
        f"## {title}",
        "",
        "| " + " | ".join(header) + " |",
        "|" + "---|" * len(header),
        "| " + " | ".join(row) + " |",
        "",
    ]


def _generation_table(section: dict) -> list[str]:
    lines = [
        "## Generation",
        "",
        "| Query type | " + " | ".join(GENERATION_COLUMNS) + " |",
        "|" + "---|" * (len(GENERATION_COLUMNS) + 1),
    ]
    for name in _TYPE_ORDER:
        cell = _stage_cell(section, name)
        if cell is None:
            continue
        lines.append("| " + " | ".join([name] + [_fmt(cell[k]) for k in _GEN_KEYS]) + " |")
    lines.append("")
    return lines


def render_markdown(report: Report) -> str:
    lines = [f"# Evaluation report — {report.run_id}", ""]
    lines += [
        "## Dataset",
        "",
        "| Query type | Count |",
        "|---|---|",
    ]
    for name in [qt.value for qt in QueryType] + ["Total"]:
        if name in report.dataset_stats:
            lines.append(f"| {name} | {report.dataset_stats[name]} |")
    lines.append("")

    if "retrieval" in report.sections:
        lines += _keyword_stage_table("Retrieval", report.run_id, report.sections["retrieval"])
    if "reranking" in report.sections:
        lines += _keyword_stage_table("Reranking", report.run_id, report.sections["reranking"])
    if "generation" in report.sections:
        lines += _generation_table(report.sections["generation"])
    return "\n".join(lines)


def export_sweep(reports: list[Report]) -> tuple[SweepSeries, str]:
    """Chunk-size series (size, retrieval accuracy, reranking accuracy, BLEU)
    plus its CSV rendering; sizes must be distinct and there must be >= 2."""
    if len(reports) < 2:
        raise DataError(f"sweep needs at least 2 reports, got {len(reports)}")
    points = []
    for rep in reports:
        size = rep.config.get("chunk_size")
        if size is None:
            raise DataError(f"report {rep.run_id} lacks chunk_size in its config echo")
        for stage in STAGE_FILES:
            if stage not in rep.sections:
                raise DataError(f"report {rep.run_id} lacks the {stage} section needed for the sweep")
        points.append(
            (
                int(size),
                float(rep.sections["retrieval"]["overall"]["accuracy"]),
                float(rep.sections["reranking"]["overall"]["accuracy"]),
                float(rep.sections["generation"]["overall"]["bleu"]),
            )
        )
    sizes = [p[0] for p in points]
    if len(set(sizes)) != len(sizes):
        raise DataError(f"duplicate chunk sizes in sweep: {sorted(sizes)}")
    points.sort(key=lambda p: p[0])
    rows = ["chunk_size,retrieval_accuracy,reranking_accuracy,generation_bleu"]
    for size, r_acc, rr_acc, bleu_ in points:
        rows.append(f"{size},{r_acc!r},{rr_acc!r},{bleu_!r}")
    return SweepSeries(points=points), "\n".join(rows) + "\n"


def compare_runs(report_a: Report, report_b: Report) -> dict:
    """Per-cell metric deltas (B minus A) for two runs over the same dataset."""
    if report_a.dataset_fingerprint != report_b.dataset_fingerprint:
        raise DataError("cannot compare runs over different datasets (fingerprint mismatch)")
    deltas: dict = {}
    for stage in STAGE_FILES:
        sa = report_a.sections.get(stage)
        sb = report_b.sections.get(stage)
        if sa is None or sb is None:
            continue
        stage_delta: dict = {}
        for name in _TYPE_ORDER:
            ca, cb = _stage_cell(sa, name), _stage_cell(sb, name)
            if ca is None or cb is None:
                continue
            cell_delta = {
                key: cb[key] - ca[key]
                for key in ca
                if key in cb and isinstance(ca[key], (int, float)) and not isinstance(ca[key], bool)
            }
            stage_delta[name] = cell_delta
        deltas[stage] = stage_delta
    return deltas
