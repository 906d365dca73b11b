import json

import pytest

from cofe.dataset import (
    DatasetStats,
    EvalExample,
    QueryType,
    dataset_stats,
    dump_dataset,
    example_to_dict,
    load_dataset,
    stats_rows,
    validate_example,
)
from cofe.errors import DataError

APPENDIX_STYLE_LINE = {
    "query type": "Analytical",
    "query": "What are the main responsibilities of a Program Support Assistant?",
    "coarse-grained keywords": ["Program Support Assistant"],
    "fine-grained keywords": [
        ["prepare proposal forms", "monitors each research proposal"],
        ["Establishes agendas", "schedules meetings"],
        ["Monitors each project"],
        ["Manages all project data activities"],
        ["Acts on requests for information"],
        ["Establishes and maintains a personal calendar"],
        ["Performs other duties as assigned"],
    ],
    "reference answer": "The main responsibilities include proposal support and committee work.",
}


def write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r, ensure_ascii=False) for r in rows) + "\n", "utf-8")


def test_spaced_keys_accepted(tmp_path):
    p = tmp_path / "data.jsonl"
    write_jsonl(p, [APPENDIX_STYLE_LINE])
    (ex,) = load_dataset(p)
    assert ex.query_type is QueryType.ANALYTICAL
    assert ex.coarse_keywords == ("Program Support Assistant",)
    assert len(ex.fine_keywords) == 7
    assert ex.id == "data.jsonl:1"  # synthesized
    assert ex.language == "zh"  # default


def test_blank_keyword_lists_are_legal(tmp_path):
    p = tmp_path / "data.jsonl"
    write_jsonl(
        p,
        [{"query_type": "Factual", "query": "q?", "coarse_keywords": [], "fine_keywords": [], "reference_answer": "a"}],
    )
    (ex,) = load_dataset(p)
    assert ex.coarse_keywords == ()
    assert ex.fine_keywords == ()


def test_invalid_query_type_rejected(tmp_path):
    p = tmp_path / "data.jsonl"
    write_jsonl(p, [{"query_type": "Opinion", "query": "q", "reference_answer": "a"}])
    with pytest.raises(DataError, match="Opinion"):
        load_dataset(p)


def test_query_type_parse_case_insensitive():
    assert QueryType.parse("factual") is QueryType.FACTUAL
    assert QueryType.parse(" TUTORIAL ") is QueryType.TUTORIAL
    with pytest.raises(DataError):
        QueryType.parse("factual-ish")


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "data.jsonl"
    p.write_text('{"query_type": "Factual", "query": "q", "reference_answer": "a"}\n{oops\n')
    with pytest.raises(DataError, match=":2"):
        load_dataset(p)


def test_duplicate_ids_rejected(tmp_path):
    p = tmp_path / "data.jsonl"
    row = {"id": "x", "query_type": "Factual", "query": "q", "reference_answer": "a"}
    write_jsonl(p, [row, row])
    with pytest.raises(DataError, match="duplicate id"):
        load_dataset(p)


def test_missing_file():
    with pytest.raises(DataError, match="not found"):
        load_dataset("/nonexistent/data.jsonl")


def well_formed():
    return EvalExample(
        id="e1",
        query_type=QueryType.FACTUAL,
        query="q?",
        reference_answer="a.",
        coarse_keywords=("k",),
        fine_keywords=(("s1", "s2"),),
    )


def test_validate_example_clean():
    assert validate_example(well_formed()) == []


def test_validate_example_empty_inner_list():
    ex = EvalExample("e", QueryType.FACTUAL, "q", "a", (), ((), ("x",)))
    problems = validate_example(ex)
    assert any("fine_keywords[0]" in p for p in problems)


def test_validate_example_blank_query():
    ex = EvalExample("e", QueryType.FACTUAL, "   ", "a")
    problems = validate_example(ex)
    assert problems == ["query: empty after trimming"]


def test_loader_output_always_validates(tmp_path):
    p = tmp_path / "data.jsonl"
    write_jsonl(p, [APPENDIX_STYLE_LINE])
    for ex in load_dataset(p):
        assert validate_example(ex) == []


def test_round_trip_identity(tmp_path):
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_jsonl(
        p1,
        [
            APPENDIX_STYLE_LINE,
            {"id": "zh-1", "language": "en", "query_type": "Tutorial", "query": "how?",
             "coarse_keywords": ["安装"], "fine_keywords": [["第一步", "第二步"]], "reference_answer": "步骤"},
        ],
    )
    first = load_dataset(p1)
    dump_dataset(first, p2)
    assert load_dataset(p2) == first


def test_stats_counts_and_total():
    types = [QueryType.FACTUAL, QueryType.FACTUAL, QueryType.ANALYTICAL]
    examples = [
        EvalExample(f"e{i}", qt, "q", "a") for i, qt in enumerate(types)
    ]
    stats = dataset_stats(examples)
    assert stats == DatasetStats(
        counts={QueryType.FACTUAL: 2, QueryType.ANALYTICAL: 1, QueryType.COMPARATIVE: 0, QueryType.TUTORIAL: 0},
        total=3,
    )
    assert stats.total == len(examples)


def test_stats_empty():
    stats = dataset_stats([])
    assert stats.total == 0
    assert all(v == 0 for v in stats.counts.values())


def test_stats_rows_table_shape():
    rows = stats_rows(dataset_stats([well_formed()]))
    assert rows == [("Factual", 1), ("Analytical", 0), ("Comparative", 0), ("Tutorial", 0), ("Total", 1)]


def test_canonical_dict_keys():
    d = example_to_dict(well_formed())
    assert set(d) == {"id", "language", "query_type", "query", "coarse_keywords", "fine_keywords", "reference_answer"}
