"""Benchmark construction: fragments, candidate generation, review filtering.

Documents are split into non-overlapping token windows; an LLM extracts a
title from the first window which is prepended to every fragment. For each
fragment the LLM is asked for one query per query type (or the literal
"It cannot be generated"), multi-granularity keywords, and a reference
answer. Fine-grained keyword lists are span-validated mechanically before
persisting. Human review records then gate which candidates become dataset
examples: the query and all coarse keywords must be accepted, the
fine-keyword acceptance rate must exceed 0.8, and the answer score must be
at least 4.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import backends
from .backends import BackendEndpoint
from .chunking import DocumentText, tokenize
from .dataset import EvalExample, QueryType, example_to_dict
from .errors import BackendError, DataError
from .keyword_metrics import normalize
from .prompts import render_template

NOT_GENERABLE = "It cannot be generated"
DEFAULT_FRAGMENT_SIZE = 3000

FINE_ACCEPT_THRESHOLD = 0.8  # strict: rate must exceed this
MIN_ANSWER_SCORE = 4  # inclusive: 4 passes

_PARSE_REASKS = 2


@dataclass(frozen=True)
class Fragment:
    fragment_id: str
    doc_id: str
    seq: int
    text: str  # extracted title prepended


@dataclass(frozen=True)
class CandidateExample:
    id: str
    fragment_id: str
    language: str
    query_type: QueryType
    query: str  # empty when status == not_generable
    coarse_keywords: tuple[str, ...]
    fine_keywords: tuple[tuple[str, ...], ...]
    reference_answer: str
    status: str = "generated"  # generated | not_generable | accepted | rejected


@dataclass(frozen=True)
class ReviewRecord:
    candidate_id: str
    query_accepted: bool
    coarse_all_accepted: bool
    fine_accept_rate: float
    answer_score: int

    def __post_init__(self):
        if not 0.0 <= self.fine_accept_rate <= 1.0:
            raise DataError(
                f"review {self.candidate_id!r}: fine_accept_rate must be in [0,1]"
            )
        if self.answer_score not in (1, 2, 3, 4, 5):
            raise DataError(f"review {self.candidate_id!r}: answer_score must be 1..5")


def detect_language(text: str) -> str:
    """zh when at least a fifth of non-space codepoints are CJK, else en."""
    chars = [c for c in text if not c.isspace()]
    if not chars:
        return "en"
    cjk = sum(1 for c in chars if 0x3400 <= ord(c) <= 0x9FFF or 0xF900 <= ord(c) <= 0xFAFF)
    return "zh" if cjk / len(chars) >= 0.2 else "en"


def _span_text(text: str, start_tok, end_tok) -> str:
    raw = text.encode("utf-8")
    return raw[start_tok.byte_span[0] : end_tok.byte_span[1]].decode("utf-8")


def _mock_title(first_window_text: str) -> str:
    tokens = tokenize(first_window_text)
    if not tokens:
        return ""
    head = tokens[: min(8, len(tokens))]
    return " ".join(t.surface for t in head)


def extract_title(first_window_text: str, llm: BackendEndpoint) -> Optional[str]:
    """Title of the document per the LLM; None when the backend fails."""
    if llm.is_mock:
        return _mock_title(first_window_text)
    prompt = render_template("title-v1", fragment=first_window_text)
    try:
        title = backends.generate(llm, prompt).strip().splitlines()
    except BackendError:
        return None
    return title[0].strip() if title else None


def split_fragments(
    doc: DocumentText, fragment_size: int, llm: BackendEndpoint
) -> list[Fragment]:
    """Non-overlapping token windows with the extracted title prepended.

    When title extraction fails the doc_id stands in, so later stages always
    see some heading context.
    """
    if fragment_size < 1:
        raise DataError(f"fragment_size must be >= 1, got {fragment_size}")
    tokens = tokenize(doc.body)
    if not tokens:
        return []
    raw = doc.body.encode("utf-8")
    windows: list[str] = []
    for start in range(0, len(tokens), fragment_size):
        end = min(start + fragment_size, len(tokens))
        lo = tokens[start].byte_span[0]
        hi = tokens[end - 1].byte_span[1]
        windows.append(raw[lo:hi].decode("utf-8"))

    title = extract_title(windows[0], llm)
    if not title:
        title = doc.doc_id
    return [
        Fragment(f"{doc.doc_id}#f{seq:04d}", doc.doc_id, seq, f"{title}: {text}")
        for seq, text in enumerate(windows)
    ]


# -- query generation ----------------------------------------------------------


def _word_tokens(text: str) -> list[str]:
    return [t.surface for t in tokenize(text)]


def _mock_queries(fragment: Fragment) -> dict[QueryType, Optional[str]]:
    toks = _word_tokens(fragment.text)
    if not toks:
        return {qt: None for qt in QueryType}
    t0 = toks[0]
    t1 = next((t for t in toks[1:] if t != t0), None)
    return {
        QueryType.FACTUAL: f"What is stated about {t0}?",
        QueryType.ANALYTICAL: f"Why does {t0} matter in this document?",
        QueryType.COMPARATIVE: f"How does {t0} differ from {t1}?" if t1 else None,
        QueryType.TUTORIAL: f"What are the steps described for {t0}?" if len(toks) >= 6 else None,
    }


def generate_queries(
    fragment: Fragment, llm: BackendEndpoint
) -> dict[QueryType, Optional[str]]:
    """One query per type; None marks a type the model declined to generate."""
    if llm.is_mock:
        return _mock_queries(fragment)
    out: dict[QueryType, Optional[str]] = {}
    for qt in QueryType:
        template_id = f"query-{qt.value.lower()}-v1"
        response = backends.generate(llm, render_template(template_id, fragment=fragment.text))
        text = response.strip()
        if not text or text.lower() == NOT_GENERABLE.lower():
            out[qt] = None
        else:
            out[qt] = text
    return out


# -- keyword generation --------------------------------------------------------


def _mock_keywords(query: str, fragment: Fragment) -> tuple[list[str], list[list[str]]]:
    tokens = tokenize(fragment.text)
    if not tokens:
        return [], []
    counts: Counter = Counter()
    first_pos: dict[str, int] = {}
    for i, t in enumerate(tokens):
        s = t.surface.lower()
        counts[s] += 1
        first_pos.setdefault(s, i)
    # most frequent surface; ties go to the earliest occurrence
    best = max(counts, key=lambda s: (counts[s], -first_pos[s]))
    coarse = [best]
    n = len(tokens)
    starts = sorted({0, n // 2, max(0, n - 3)})
    fine = []
    for s in starts:
        e = min(s + 3, n) - 1
        fine.append([_span_text(fragment.text, tokens[s], tokens[e])])
    return coarse, fine


def _first_json(text: str):
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch in "{[":
            try:
                obj, _ = decoder.raw_decode(text[i:])
                return obj
            except json.JSONDecodeError:
                continue
    return None


def _parse_keyword_payload(obj) -> Optional[tuple[list[str], list[list[str]]]]:
    if not isinstance(obj, dict):
        return None
    coarse = obj.get("coarse", [])
    fine = obj.get("fine", [])
    if not isinstance(coarse, list) or not isinstance(fine, list):
        return None
    if any(not isinstance(lst, list) for lst in fine):
        return None
    return (
        [str(k) for k in coarse],
        [[str(el) for el in lst] for lst in fine],
    )


def _generate_keywords_raw(
    query: str, fragment: Fragment, llm: BackendEndpoint
) -> tuple[list[str], list[list[str]]]:
    if llm.is_mock:
        return _mock_keywords(query, fragment)
    prompt = render_template("keywords-v1", query=query, fragment=fragment.text)
    for _ in range(1 + _PARSE_REASKS):
        response = backends.generate(llm, prompt)
        parsed = _parse_keyword_payload(_first_json(response))
        if parsed is not None:
            return parsed
    raise BackendError(
        f"keyword generation returned no parseable JSON after {_PARSE_REASKS} re-asks"
    )


def generate_keywords(
    query: str, fragment: Fragment, llm: BackendEndpoint
) -> tuple[list[str], list[list[str]]]:
    """Coarse keywords and span-validated fine keyword lists for one query.

    Empty outputs are legal (nothing representative to extract). Structured
    output is requested as JSON and parsed leniently; two re-asks before
    giving up. Fine lists with non-verbatim elements are dropped here.
    """
    coarse, fine = _generate_keywords_raw(query, fragment, llm)
    kept, _ = validate_fine_spans(fragment, fine)
    return coarse, kept


def validate_fine_spans(
    fragment: Fragment, fine: list[list[str]]
) -> tuple[list[list[str]], list[dict]]:
    """Drop lists with any element that is not a verbatim (normalized)
    substring of the fragment; report what was dropped and why."""
    body = normalize(fragment.text)
    kept: list[list[str]] = []
    drops: list[dict] = []
    for i, lst in enumerate(fine):
        missing = [el for el in lst if normalize(el) not in body]
        if missing:
            drops.append({"list_index": i, "missing_elements": missing})
        else:
            kept.append(list(lst))
    return kept, drops


# -- reference answers ---------------------------------------------------------


def generate_answer(query: str, fragment: Fragment, llm: BackendEndpoint) -> str:
    prompt = render_template("answer-v1", query=query, fragment=fragment.text)
    for _ in range(1 + _PARSE_REASKS):
        answer = backends.generate(llm, prompt).strip()
        if answer:
            return answer
    raise BackendError(f"empty reference answer after {_PARSE_REASKS} re-asks")


# -- candidate generation driver ------------------------------------------------


def generate_candidates(
    fragment: Fragment, llm: BackendEndpoint
) -> tuple[list[CandidateExample], list[dict]]:
    """All four query types attempted for one fragment."""
    language = detect_language(fragment.text)
    queries = generate_queries(fragment, llm)
    candidates: list[CandidateExample] = []
    span_drops: list[dict] = []
    for qt in QueryType:
        cid = f"{fragment.fragment_id}:{qt.value}"
        query = queries[qt]
        if query is None:
            candidates.append(
                CandidateExample(cid, fragment.fragment_id, language, qt, "", (), (), "", "not_generable")
            )
            continue
        coarse, raw_fine = _generate_keywords_raw(query, fragment, llm)
        fine, drops = validate_fine_spans(fragment, raw_fine)
        answer = generate_answer(query, fragment, llm)
        candidates.append(
            CandidateExample(
                id=cid,
                fragment_id=fragment.fragment_id,
                language=language,
                query_type=qt,
                query=query,
                coarse_keywords=tuple(coarse),
                fine_keywords=tuple(tuple(lst) for lst in fine),
                reference_answer=answer,
                status="generated",
            )
        )
        for d in drops:
            span_drops.append({"candidate_id": cid, **d})
    return candidates, span_drops


# -- review filtering ------------------------------------------------------------


def review_passes(review: ReviewRecord) -> tuple[bool, list[str]]:
    reasons = []
    if not review.query_accepted:
        reasons.append("query_rejected")
    if not review.coarse_all_accepted:
        reasons.append("coarse_rejected")
    if not review.fine_accept_rate > FINE_ACCEPT_THRESHOLD:
        reasons.append("fine_accept_rate_too_low")
    if review.answer_score < MIN_ANSWER_SCORE:
        reasons.append("answer_score_too_low")
    return (not reasons), reasons


def apply_review(
    candidates: list[CandidateExample], reviews: list[ReviewRecord]
) -> tuple[list[EvalExample], dict]:
    """Filter candidates by their review records.

    A candidate is accepted iff its query and all coarse keywords were
    accepted, its fine-keyword acceptance rate strictly exceeds 0.8, and its
    answer scored 4 or 5. Unreviewed candidates stay in the generated state.
    Pure: re-applying the same reviews gives the same accepted set.
    """
    by_id = {c.id: c for c in candidates}
    seen: set[str] = set()
    accepted: list[EvalExample] = []
    reason_counts: Counter = Counter()
    rejected = 0
    for review in reviews:
        if review.candidate_id not in by_id:
            raise DataError(f"review references unknown candidate {review.candidate_id!r}")
        if review.candidate_id in seen:
            raise DataError(f"candidate {review.candidate_id!r} has more than one review")
        seen.add(review.candidate_id)
        cand = by_id[review.candidate_id]
        if cand.status == "not_generable":
            raise DataError(f"candidate {cand.id!r} was never generated and cannot be reviewed")
        ok, reasons = review_passes(review)
        if ok:
            accepted.append(
                EvalExample(
                    id=cand.id,
                    query_type=cand.query_type,
                    query=cand.query,
                    reference_answer=cand.reference_answer,
                    coarse_keywords=cand.coarse_keywords,
                    fine_keywords=cand.fine_keywords,
                    language=cand.language,
                )
            )
        else:
            rejected += 1
            reason_counts.update(reasons)
    generable = [c for c in candidates if c.status != "not_generable"]
    report = {
        "candidates": len(candidates),
        "not_generable": len(candidates) - len(generable),
        "reviewed": len(seen),
        "unreviewed": len(generable) - len(seen),
        "accepted": len(accepted),
        "rejected": rejected,
        "rejection_reasons": dict(sorted(reason_counts.items())),
    }
    return accepted, report


# -- persistence -----------------------------------------------------------------


def candidate_to_dict(c: CandidateExample) -> dict:
    return {
        "id": c.id,
        "fragment_id": c.fragment_id,
        "language": c.language,
        "query_type": c.query_type.value,
        "query": c.query,
        "coarse_keywords": list(c.coarse_keywords),
        "fine_keywords": [list(l) for l in c.fine_keywords],
        "reference_answer": c.reference_answer,
        "status": c.status,
    }


def candidate_from_dict(obj: dict) -> CandidateExample:
    return CandidateExample(
        id=obj["id"],
        fragment_id=obj["fragment_id"],
        language=obj.get("language", "zh"),
        query_type=QueryType.parse(obj["query_type"]),
        query=obj.get("query", ""),
        coarse_keywords=tuple(obj.get("coarse_keywords") or ()),
        fine_keywords=tuple(tuple(l) for l in (obj.get("fine_keywords") or ())),
        reference_answer=obj.get("reference_answer", ""),
        status=obj.get("status", "generated"),
    )


def load_candidates(path: str | Path) -> list[CandidateExample]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(candidate_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as e:
                raise DataError(f"{path}:{lineno}: malformed candidate: {e}") from e
    return out


def load_reviews(path: str | Path) -> list[ReviewRecord]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(
                    ReviewRecord(
                        candidate_id=obj["candidate_id"],
                        query_accepted=bool(obj["query_accepted"]),
                        coarse_all_accepted=bool(obj["coarse_all_accepted"]),
                        fine_accept_rate=float(obj["fine_accept_rate"]),
                        answer_score=int(obj["answer_score"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise DataError(f"{path}:{lineno}: malformed review: {e}") from e
    return out


def run_construction(
    docs: list[DocumentText],
    llm: BackendEndpoint,
    out_dir: str | Path,
    fragment_size: int = DEFAULT_FRAGMENT_SIZE,
) -> dict:
    """Generate candidates for every document, then apply reviews if present.

    Restartable: documents that already contributed candidates are skipped.
    Outputs: fragments.jsonl, candidates.jsonl, spans_dropped.jsonl, and,
    when out_dir/reviews.jsonl exists, accepted.jsonl + review_report.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    candidates_path = out / "candidates.jsonl"
    fragments_path = out / "fragments.jsonl"
    drops_path = out / "spans_dropped.jsonl"

    existing = load_candidates(candidates_path) if candidates_path.exists() else []
    done_docs = {c.fragment_id.split("#f")[0] for c in existing}

    n_new = 0
    with candidates_path.open("a", encoding="utf-8") as cand_f, fragments_path.open(
        "a", encoding="utf-8"
    ) as frag_f, drops_path.open("a", encoding="utf-8") as drop_f:
        for doc in docs:
            if doc.doc_id in done_docs:
                continue
            for fragment in split_fragments(doc, fragment_size, llm):
                frag_f.write(
                    json.dumps(
                        {
                            "fragment_id": fragment.fragment_id,
                            "doc_id": fragment.doc_id,
                            "seq": fragment.seq,
                            "text": fragment.text,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
                cands, drops = generate_candidates(fragment, llm)
                for c in cands:
                    cand_f.write(json.dumps(candidate_to_dict(c), ensure_ascii=False) + "\n")
                    n_new += 1
                for d in drops:
                    drop_f.write(json.dumps(d, ensure_ascii=False) + "\n")

    report: dict = {"new_candidates": n_new}
    reviews_path = out / "reviews.jsonl"
    if reviews_path.exists():
        all_candidates = load_candidates(candidates_path)
        reviews = load_reviews(reviews_path)
        accepted, review_report = apply_review(all_candidates, reviews)
        with (out / "accepted.jsonl").open("w", encoding="utf-8") as f:
            for ex in accepted:
                f.write(json.dumps(example_to_dict(ex), ensure_ascii=False) + "\n")
        (out / "review_report.json").write_text(
            json.dumps(review_report, indent=2, sort_keys=True), encoding="utf-8"
        )
        report["review"] = review_report
    return report
