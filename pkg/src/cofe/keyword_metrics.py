"""Retrieval scoring against multi-granularity keywords.

Coarse keywords act as a loose filter over retrieved chunks; fine-grained
keyword lists are then matched against the concatenation of the surviving
chunks. A list counts as recalled only if every one of its elements occurs
verbatim (after normalization) in that concatenation. Recall is the fraction
of lists recalled; Accuracy is the fraction of examples whose lists were all
recalled. No golden-chunk annotation is involved, so both metrics survive
changes to the chunking strategy.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass

from .chunking import Chunk
from .dataset import EvalExample, QueryType
from .errors import DataError

_WS = re.compile(r"\s+")


def normalize(text: str) -> str:
    """NFKC, lowercase, collapse whitespace runs to single spaces, trim.

    Idempotent, and the result never contains a newline, which is what makes
    the "\\n" join separator in :func:`match_fine_list` unmatchable.
    """
    return _WS.sub(" ", unicodedata.normalize("NFKC", text).lower()).strip()


@dataclass(frozen=True)
class ExampleRetrievalEval:
    example_id: str
    query_type: QueryType
    lists_total: int
    lists_recalled: int
    fully_correct: bool
    skipped: bool  # example had no fine-grained keyword lists


@dataclass(frozen=True)
class MetricCell:
    recall: float
    accuracy: float
    examples: int  # non-skipped examples aggregated into this cell
    lists_total: int
    lists_recalled: int
    fully_correct: int


@dataclass(frozen=True)
class StageMetrics:
    overall: MetricCell
    per_type: dict[str, MetricCell]  # only query types with >= 1 non-skipped example
    skipped: int


def coarse_filter(chunks: list[Chunk], coarse_keywords: list[str]) -> list[Chunk]:
    """Keep chunks whose normalized text contains any normalized coarse keyword.

    An empty keyword list is a no-op filter: all chunks are kept.
    """
    if not coarse_keywords:
        return list(chunks)
    needles = [normalize(k) for k in coarse_keywords]
    return [c for c in chunks if any(n in normalize(c.text) for n in needles)]


def match_fine_list(filtered_chunks: list[Chunk], fine_list: list[str]) -> bool:
    """True iff every element of the list occurs in the joined kept chunks."""
    if not filtered_chunks:
        return False
    joined = "\n".join(normalize(c.text) for c in filtered_chunks)
    return all(normalize(el) in joined for el in fine_list)


def evaluate_example(ex: EvalExample, chunks: list[Chunk]) -> ExampleRetrievalEval:
    if not ex.fine_keywords:
        return ExampleRetrievalEval(ex.id, ex.query_type, 0, 0, False, True)
    kept = coarse_filter(chunks, list(ex.coarse_keywords))
    recalled = sum(1 for lst in ex.fine_keywords if match_fine_list(kept, list(lst)))
    total = len(ex.fine_keywords)
    return ExampleRetrievalEval(ex.id, ex.query_type, total, recalled, recalled == total, False)


def _aggregate(evals: list[ExampleRetrievalEval]) -> MetricCell:
    lists_total = sum(e.lists_total for e in evals)
    lists_recalled = sum(e.lists_recalled for e in evals)
    correct = sum(1 for e in evals if e.fully_correct)
    n = len(evals)
    return MetricCell(
        recall=lists_recalled / lists_total if lists_total else 0.0,
        accuracy=correct / n if n else 0.0,
        examples=n,
        lists_total=lists_total,
        lists_recalled=lists_recalled,
        fully_correct=correct,
    )


def evaluate_retrieval(
    examples: list[EvalExample], chunk_lists: dict[str, list[Chunk]]
) -> tuple[list[ExampleRetrievalEval], StageMetrics]:
    """Score every example's chunk list and aggregate Recall/Accuracy.

    Examples without fine-grained lists carry no retrieval ground truth; they
    are marked skipped and excluded from both denominators. Per-type cells
    restrict numerator and denominator to that type's examples; Overall is
    computed over all non-skipped examples, never averaged from the per-type
    cells.
    """
    evals: list[ExampleRetrievalEval] = []
    for ex in examples:
        if ex.id not in chunk_lists:
            raise DataError(f"no chunk list for example {ex.id!r}")
        evals.append(evaluate_example(ex, chunk_lists[ex.id]))

    scored = [e for e in evals if not e.skipped]
    per_type = {}
    for qt in QueryType:
        sub = [e for e in scored if e.query_type is qt]
        if sub:
            per_type[qt.value] = _aggregate(sub)
    metrics = StageMetrics(
        overall=_aggregate(scored),
        per_type=per_type,
        skipped=len(evals) - len(scored),
    )
    return evals, metrics


def eval_to_dict(e: ExampleRetrievalEval) -> dict:
    return {
        "example_id": e.example_id,
        "query_type": e.query_type.value,
        "lists_total": e.lists_total,
        "lists_recalled": e.lists_recalled,
        "fully_correct": e.fully_correct,
        "skipped": e.skipped,
    }


def _cell_to_dict(c: MetricCell) -> dict:
    return {
        "recall": c.recall,
        "accuracy": c.accuracy,
        "examples": c.examples,
        "lists_total": c.lists_total,
        "lists_recalled": c.lists_recalled,
        "fully_correct": c.fully_correct,
    }


def stage_metrics_to_dict(m: StageMetrics) -> dict:
    return {
        "overall": _cell_to_dict(m.overall),
        "per_type": {k: _cell_to_dict(v) for k, v in sorted(m.per_type.items())},
        "skipped": m.skipped,
    }
