"""Benchmark data model: typed queries with multi-granularity keywords.

Each example carries a query of one of four types, optional coarse keywords
(loose chunk filter), fine-grained keyword lists (one list per information
point, elements are verbatim spans), and a reference answer.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import DataError

LANGUAGES = ("zh", "en")

# Paper-style spaced key -> canonical key accepted on input.
_KEY_ALIASES = {
    "query type": "query_type",
    "coarse-grained keywords": "coarse_keywords",
    "fine-grained keywords": "fine_keywords",
    "reference answer": "reference_answer",
}


class QueryType(enum.Enum):
    FACTUAL = "Factual"
    ANALYTICAL = "Analytical"
    COMPARATIVE = "Comparative"
    TUTORIAL = "Tutorial"

    @classmethod
    def parse(cls, raw: str) -> "QueryType":
        for qt in cls:
            if qt.value.lower() == str(raw).strip().lower():
                return qt
        valid = ", ".join(qt.value for qt in cls)
        raise DataError(f"invalid query type {raw!r} (expected one of: {valid})")


QUERY_TYPES = tuple(QueryType)


@dataclass(frozen=True)
class EvalExample:
    id: str
    query_type: QueryType
    query: str
    reference_answer: str
    coarse_keywords: tuple[str, ...] = ()
    fine_keywords: tuple[tuple[str, ...], ...] = ()
    language: str = "zh"


@dataclass(frozen=True)
class DatasetStats:
    counts: dict[QueryType, int]
    total: int


def validate_example(ex: EvalExample) -> list[str]:
    """Return a description of each invariant violation; empty when well-formed."""
    problems: list[str] = []
    if not ex.id or not ex.id.strip():
        problems.append("id: empty")
    if ex.language not in LANGUAGES:
        problems.append(f"language: {ex.language!r} not in {LANGUAGES}")
    if not ex.query.strip():
        problems.append("query: empty after trimming")
    if not ex.reference_answer.strip():
        problems.append("reference_answer: empty after trimming")
    for i, kw in enumerate(ex.coarse_keywords):
        if not kw.strip():
            problems.append(f"coarse_keywords[{i}]: empty after trimming")
    for i, lst in enumerate(ex.fine_keywords):
        if not lst:
            problems.append(f"fine_keywords[{i}]: empty list")
        for j, kw in enumerate(lst):
            if not kw.strip():
                problems.append(f"fine_keywords[{i}][{j}]: empty after trimming")
    return problems


def _canonicalize_keys(obj: dict) -> dict:
    out = dict(obj)
    for alias, canon in _KEY_ALIASES.items():
        if alias in out and canon not in out:
            out[canon] = out.pop(alias)
    return out


def example_from_dict(obj: dict, default_id: str) -> EvalExample:
    obj = _canonicalize_keys(obj)
    ex_id = str(obj.get("id") or default_id)
    raw_type = obj.get("query_type")
    if raw_type is None:
        raise DataError(f"example {ex_id!r}: missing query_type")
    fine_raw = obj.get("fine_keywords") or []
    if not isinstance(fine_raw, list) or any(not isinstance(l, list) for l in fine_raw):
        raise DataError(f"example {ex_id!r}: fine_keywords must be a list of lists")
    coarse_raw = obj.get("coarse_keywords") or []
    if not isinstance(coarse_raw, list):
        raise DataError(f"example {ex_id!r}: coarse_keywords must be a list")
    ex = EvalExample(
        id=ex_id,
        query_type=QueryType.parse(raw_type),
        query=str(obj.get("query") or ""),
        reference_answer=str(obj.get("reference_answer") or ""),
        coarse_keywords=tuple(str(k) for k in coarse_raw),
        fine_keywords=tuple(tuple(str(k) for k in lst) for lst in fine_raw),
        language=str(obj.get("language") or "zh"),
    )
    problems = validate_example(ex)
    if problems:
        raise DataError(f"example {ex_id!r}: " + "; ".join(problems))
    return ex


def example_to_dict(ex: EvalExample) -> dict:
    return {
        "id": ex.id,
        "language": ex.language,
        "query_type": ex.query_type.value,
        "query": ex.query,
        "coarse_keywords": list(ex.coarse_keywords),
        "fine_keywords": [list(l) for l in ex.fine_keywords],
        "reference_answer": ex.reference_answer,
    }


def load_dataset(path: str | Path) -> list[EvalExample]:
    """Load and validate a JSONL dataset.

    Accepts both canonical snake_case keys and the spaced variants
    ("query type", "coarse-grained keywords", ...). Examples without an id
    get ``"<filename>:<line>"``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset not found: {path}")
    examples: list[EvalExample] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: malformed JSON: {e.msg}") from e
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            ex = example_from_dict(obj, default_id=f"{path.name}:{lineno}")
            if ex.id in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {ex.id!r}")
            seen.add(ex.id)
            examples.append(ex)
    return examples


def dump_dataset(examples: Iterable[EvalExample], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(example_to_dict(ex), ensure_ascii=False) + "\n")


def dataset_stats(examples: Iterable[EvalExample]) -> DatasetStats:
    counts = {qt: 0 for qt in QueryType}
    total = 0
    for ex in examples:
        counts[ex.query_type] += 1
        total += 1
    return DatasetStats(counts=counts, total=total)


def stats_rows(stats: DatasetStats) -> list[tuple[str, int]]:
    """(type, count) rows plus a Total row, in fixed display order."""
    rows = [(qt.value, stats.counts[qt]) for qt in QueryType]
    rows.append(("Total", stats.total))
    return rows


def dataset_fingerprint(examples: Iterable[EvalExample]) -> str:
    h = hashlib.sha256()
    for ex in examples:
        h.update(json.dumps(example_to_dict(ex), ensure_ascii=False, sort_keys=True).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()
