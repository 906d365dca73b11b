"""Generated-answer scoring: BLEU, Rouge-L, and LLM-judged metrics.

BLEU is sentence-level over n = 1..4 with uniform weights, add-one smoothing
on the higher-order precisions, and the standard brevity penalty. Rouge-L is
token-level LCS with F1 at beta = 1. Faithfulness/Relevance are binary judge
verdicts; Correctness is a judged 1..5 score with a reason. With a mock
judge endpoint the verdict text is synthesized deterministically from token
overlap, then fed through the same parsers as a real response.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Optional

from .backends import BackendEndpoint, generate
from .chunking import Chunk, tokenize
from .dataset import EvalExample, QueryType
from .errors import BackendError
from .prompts import render_context_block, render_template

_JUDGE_REASKS = 2  # re-asks after an unparseable verdict, then give up


def _surfaces(text: str) -> list[str]:
    return [t.surface for t in tokenize(text)]


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, language: str = "zh") -> float:
    cand = _surfaces(candidate)
    ref = _surfaces(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        cn = _ngram_counts(cand, n)
        rn = _ngram_counts(ref, n)
        matches = sum(min(count, rn[g]) for g, count in cn.items())
        total = sum(cn.values())
        if n == 1:
            if matches == 0:
                return 0.0
            p = matches / total
        else:
            p = (matches + 1) / (total + 1)
        log_sum += 0.25 * math.log(p)
    bp = 1.0 if len(cand) > len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return bp * math.exp(log_sum)


def _lcs_len(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str, language: str = "zh") -> tuple[float, float, float]:
    """(precision, recall, f1) of the token-level longest common subsequence."""
    cand = _surfaces(candidate)
    ref = _surfaces(reference)
    if not cand or not ref:
        return (0.0, 0.0, 0.0)
    lcs = _lcs_len(cand, ref)
    p = lcs / len(cand)
    r = lcs / len(ref)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return (p, r, f1)


# -- judges ------------------------------------------------------------------

_SCORE_RE = re.compile(r"(?<!\d)[1-5](?!\d)")


def parse_verdict(response: str) -> Optional[bool]:
    """First case-insensitive "yes"/"no" in the first line; None if neither."""
    first_line = response.splitlines()[0].lower() if response else ""
    yes = first_line.find("yes")
    no = first_line.find("no")
    if yes < 0 and no < 0:
        return None
    if yes < 0:
        return False
    if no < 0:
        return True
    return yes < no


def parse_score(response: str) -> Optional[tuple[int, str]]:
    """First lone integer 1..5 as the score; the remainder is the reason."""
    m = _SCORE_RE.search(response)
    if not m:
        return None
    reason = response[m.end() :].strip()
    reason = re.sub(r"^[\s:,.;—-]*reason\s*:?\s*", "", reason, flags=re.IGNORECASE)
    return int(m.group()), reason.strip()


def _coverage(answer: str, context_texts: list[str]) -> float:
    ans = {t.surface.lower() for t in tokenize(answer)}
    if not ans:
        return 0.0
    ctx: set[str] = set()
    for text in context_texts:
        ctx.update(t.surface.lower() for t in tokenize(text))
    return len(ans & ctx) / len(ans)


def _mock_faithfulness_response(context_texts: list[str], answer: str) -> str:
    return "YES" if _coverage(answer, context_texts) >= 0.5 else "NO"


def _mock_relevance_response(query: str, context_texts: list[str], answer: str) -> str:
    ans = {t.surface.lower() for t in tokenize(answer)}
    q = {t.surface.lower() for t in tokenize(query)}
    ok = bool(ans & q) and bool(context_texts)
    return "YES" if ok else "NO"


def _mock_correctness_response(answer: str, reference: str) -> str:
    f1 = rouge_l(answer, reference)[2]
    score = max(1, min(5, math.floor(1 + 4 * f1 + 0.5)))  # round half up
    return f"Score: {score}\nReason: mock rubric applied to reference overlap."


def _ask_judge(ep: BackendEndpoint, prompt_fn, parse_fn, what: str):
    last = ""
    for _ in range(1 + _JUDGE_REASKS):
        response = prompt_fn()
        parsed = parse_fn(response)
        if parsed is not None:
            return parsed
        last = response
    raise BackendError(f"judge returned no parseable {what} after {_JUDGE_REASKS} re-asks: {last[:120]!r}")


def judge_faithfulness(
    query: str, context_chunks: list[Chunk], answer: str, ep: BackendEndpoint
) -> bool:
    texts = [c.text for c in context_chunks]
    if ep.is_mock:
        ask = lambda: _mock_faithfulness_response(texts, answer)
    else:
        prompt = render_template(
            "faithfulness-v1", query=query, context=render_context_block(texts), answer=answer
        )
        ask = lambda: generate(ep, prompt)
    return _ask_judge(ep, ask, parse_verdict, "faithfulness verdict")


def judge_relevance(
    query: str, context_chunks: list[Chunk], answer: str, ep: BackendEndpoint
) -> bool:
    texts = [c.text for c in context_chunks]
    if ep.is_mock:
        ask = lambda: _mock_relevance_response(query, texts, answer)
    else:
        prompt = render_template(
            "relevance-v1", query=query, context=render_context_block(texts), answer=answer
        )
        ask = lambda: generate(ep, prompt)
    return _ask_judge(ep, ask, parse_verdict, "relevance verdict")


def judge_correctness(
    query: str, answer: str, reference: str, ep: BackendEndpoint
) -> tuple[int, str]:
    if ep.is_mock:
        ask = lambda: _mock_correctness_response(answer, reference)
    else:
        prompt = render_template("correctness-v1", query=query, answer=answer, reference=reference)
        ask = lambda: generate(ep, prompt)
    return _ask_judge(ep, ask, parse_score, "correctness score")


# -- per-example evaluation and aggregation ----------------------------------


@dataclass(frozen=True)
class GenEval:
    example_id: str
    bleu: float
    rouge_l_f1: float
    faithfulness: bool
    relevance: bool
    correctness_score: int
    correctness_reason: str


@dataclass(frozen=True)
class GenCell:
    bleu: float
    rouge_l_f1: float
    faithfulness: float
    relevance: float
    pass_rate: float  # fraction with correctness_score >= 4
    score: float  # mean correctness_score
    examples: int


@dataclass(frozen=True)
class GenerationMetrics:
    overall: GenCell
    per_type: dict[str, GenCell]  # only query types that actually occur


def evaluate_answer(
    ex: EvalExample, answer: str, context_chunks: list[Chunk], judge_ep: BackendEndpoint
) -> GenEval:
    score, reason = judge_correctness(ex.query, answer, ex.reference_answer, judge_ep)
    return GenEval(
        example_id=ex.id,
        bleu=bleu(answer, ex.reference_answer, ex.language),
        rouge_l_f1=rouge_l(answer, ex.reference_answer, ex.language)[2],
        faithfulness=judge_faithfulness(ex.query, context_chunks, answer, judge_ep),
        relevance=judge_relevance(ex.query, context_chunks, answer, judge_ep),
        correctness_score=score,
        correctness_reason=reason,
    )


def _gen_cell(evals: list[GenEval]) -> GenCell:
    n = len(evals)
    return GenCell(
        bleu=sum(e.bleu for e in evals) / n,
        rouge_l_f1=sum(e.rouge_l_f1 for e in evals) / n,
        faithfulness=sum(1 for e in evals if e.faithfulness) / n,
        relevance=sum(1 for e in evals if e.relevance) / n,
        pass_rate=sum(1 for e in evals if e.correctness_score >= 4) / n,
        score=sum(e.correctness_score for e in evals) / n,
        examples=n,
    )


def aggregate_generation(evals: list[GenEval], examples: list[EvalExample]) -> GenerationMetrics:
    """Means and rates per query type and Overall; empty type groups are
    reported as absent, not zero."""
    type_of = {ex.id: ex.query_type for ex in examples}
    per_type: dict[str, GenCell] = {}
    for qt in QueryType:
        sub = [e for e in evals if type_of.get(e.example_id) is qt]
        if sub:
            per_type[qt.value] = _gen_cell(sub)
    if not evals:
        overall = GenCell(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
    else:
        overall = _gen_cell(evals)
    return GenerationMetrics(overall=overall, per_type=per_type)


def gen_eval_to_dict(e: GenEval) -> dict:
    return {
        "example_id": e.example_id,
        "bleu": e.bleu,
        "rouge_l_f1": e.rouge_l_f1,
        "faithfulness": e.faithfulness,
        "relevance": e.relevance,
        "correctness_score": e.correctness_score,
        "correctness_reason": e.correctness_reason,
    }


def _gen_cell_to_dict(c: GenCell) -> dict:
    return {
        "bleu": c.bleu,
        "rouge_l": c.rouge_l_f1,
        "faithfulness": c.faithfulness,
        "relevance": c.relevance,
        "pass": c.pass_rate,
        "score": c.score,
        "examples": c.examples,
    }


def generation_metrics_to_dict(m: GenerationMetrics) -> dict:
    return {
        "overall": _gen_cell_to_dict(m.overall),
        "per_type": {k: _gen_cell_to_dict(v) for k, v in sorted(m.per_type.items())},
    }
