import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from cofe.backends import mock_endpoint
from cofe.dataset import EvalExample, QueryType
from cofe.errors import BackendError
from cofe.gen_metrics import (
    GenEval,
    aggregate_generation,
    bleu,
    evaluate_answer,
    judge_correctness,
    judge_faithfulness,
    judge_relevance,
    parse_score,
    parse_verdict,
    rouge_l,
    _ask_judge,
)

from conftest import make_chunk
from oracles import oracle_bleu, oracle_rouge_l, random_text

JUDGE = mock_endpoint("generate")


def test_bleu_identity():
    assert bleu("the cat sat", "the cat sat") == pytest.approx(1.0, abs=1e-9)
    assert bleu("智能汽车发展很快", "智能汽车发展很快") == pytest.approx(1.0, abs=1e-9)


def test_bleu_disjoint_tokens_zero():
    assert bleu("alpha beta", "gamma delta") == 0.0


def test_bleu_empty_candidate():
    assert bleu("", "reference text") == 0.0


def test_bleu_hand_computed_fixture():
    # cand "the cat sat" (3 tokens) vs ref "the cat sat down" (4 tokens):
    # p1 = 1, smoothed p2 = p3 = p4 = 1, BP = exp(1 - 4/3)
    assert bleu("the cat sat", "the cat sat down") == pytest.approx(math.exp(1 - 4 / 3), abs=1e-12)


def test_rouge_l_fixture():
    p, r, f1 = rouge_l("the cat", "the cat sat")
    assert p == pytest.approx(1.0)
    assert r == pytest.approx(2 / 3)
    assert f1 == pytest.approx(0.8, abs=1e-9)


def test_rouge_l_identity_and_empty():
    assert rouge_l("same text", "same text")[2] == pytest.approx(1.0)
    assert rouge_l("", "ref") == (0.0, 0.0, 0.0)
    assert rouge_l("cand", "") == (0.0, 0.0, 0.0)


def test_rouge_l_swap_exchanges_p_and_r():
    p, r, f1 = rouge_l("a b c", "a b c d e")
    p2, r2, f2 = rouge_l("a b c d e", "a b c")
    assert (p, r) == (r2, p2)
    assert f1 == pytest.approx(f2)


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bleu_and_rouge_match_oracles(seed):
    rng = random.Random(seed)
    cand = random_text(rng, 0, 15) if rng.random() > 0.05 else ""
    ref = random_text(rng, 1, 15)
    from cofe.chunking import tokenize

    ct = [t.surface for t in tokenize(cand)]
    rt = [t.surface for t in tokenize(ref)]
    assert bleu(cand, ref) == oracle_bleu(ct, rt)
    assert rouge_l(cand, ref) == oracle_rouge_l(ct, rt)
    assert 0.0 <= bleu(cand, ref) <= 1.0
    assert 0.0 <= rouge_l(cand, ref)[2] <= 1.0


def test_parse_verdict_rules():
    assert parse_verdict("Yes, directly relevant.") is True
    assert parse_verdict("NO — the answer invents figures") is False
    assert parse_verdict("yes") is True
    assert parse_verdict("It depends\nyes") is None  # only the first line counts
    assert parse_verdict("") is None
    assert parse_verdict("the answer is yes, NOT no") is True  # first occurrence wins


def test_parse_score_rules():
    assert parse_score("Score: 4\nReason: minor omission") == (4, "minor omission")
    assert parse_score("5 — matches the reference exactly") == (5, "— matches the reference exactly")
    assert parse_score("I rate this 10 out of 10") is None  # 10 is not a lone 1..5 digit
    assert parse_score("no digits here") is None
    assert parse_score("3") == (3, "")


def test_mock_faithfulness_coverage_rule():
    ctx = [make_chunk("c", "alpha beta gamma delta")]
    assert judge_faithfulness("q", ctx, "alpha beta", JUDGE) is True  # fully covered
    assert judge_faithfulness("q", ctx, "alpha zulu", JUDGE) is True  # 1/2 covered = 0.5
    assert judge_faithfulness("q", ctx, "zulu yankee xray", JUDGE) is False
    assert judge_faithfulness("q", ctx, "", JUDGE) is False


def test_mock_relevance_rule():
    ctx = [make_chunk("c", "some context")]
    assert judge_relevance("intelligent cars", ctx, "cars are great", JUDGE) is True
    assert judge_relevance("intelligent cars", ctx, "", JUDGE) is False
    assert judge_relevance("intelligent cars", [], "cars", JUDGE) is False
    assert judge_relevance("intelligent cars", ctx, "unrelated words", JUDGE) is False


def test_mock_correctness_rule():
    assert judge_correctness("q", "exact answer", "exact answer", JUDGE)[0] == 5
    assert judge_correctness("q", "zzz yyy", "totally different", JUDGE)[0] == 1
    score, reason = judge_correctness("q", "half right words", "half right words plus more detail", JUDGE)
    assert 1 <= score <= 5
    assert reason


def test_judge_reask_then_error():
    calls = []

    def flaky():
        calls.append(1)
        return "hmm, unclear"

    with pytest.raises(BackendError, match="re-asks"):
        _ask_judge(JUDGE, flaky, parse_verdict, "verdict")
    assert len(calls) == 3  # initial ask + 2 re-asks


def test_judge_reask_recovers():
    responses = iter(["???", "YES"])
    assert _ask_judge(JUDGE, lambda: next(responses), parse_verdict, "verdict") is True


def ev(i, b, r, f, rel, s):
    return GenEval(f"e{i}", b, r, f, rel, s, "why")


def exs(types):
    return [EvalExample(f"e{i}", qt, "q", "a") for i, qt in enumerate(types)]


def test_aggregate_fixture():
    evals = [ev(0, 0.5, 0.5, True, True, 5), ev(1, 0.5, 0.5, True, False, 4), ev(2, 0.5, 0.5, False, True, 2)]
    metrics = aggregate_generation(evals, exs([QueryType.FACTUAL] * 3))
    assert metrics.overall.pass_rate == pytest.approx(2 / 3)
    assert metrics.overall.score == pytest.approx(11 / 3)
    assert metrics.overall.faithfulness == pytest.approx(2 / 3)
    assert metrics.overall.relevance == pytest.approx(2 / 3)


def test_aggregate_empty_type_groups_absent():
    evals = [ev(0, 1.0, 1.0, True, True, 5)]
    metrics = aggregate_generation(evals, exs([QueryType.TUTORIAL]))
    assert set(metrics.per_type) == {"Tutorial"}


def test_pass_rate_one_implies_score_at_least_four():
    evals = [ev(0, 0.1, 0.1, True, True, 4), ev(1, 0.2, 0.2, True, True, 5)]
    metrics = aggregate_generation(evals, exs([QueryType.FACTUAL] * 2))
    assert metrics.overall.pass_rate == 1.0
    assert metrics.overall.score >= 4


def test_identical_answers_all_ones_with_mock_judge():
    ex = EvalExample("e0", QueryType.FACTUAL, "what is alpha?", "alpha is the first letter")
    ctx = [make_chunk("c", "alpha is the first letter")]
    result = evaluate_answer(ex, "alpha is the first letter", ctx, JUDGE)
    assert result.bleu == pytest.approx(1.0)
    assert result.rouge_l_f1 == pytest.approx(1.0)
    assert result.correctness_score == 5
    assert result.faithfulness and result.relevance
    metrics = aggregate_generation([result], [ex])
    assert metrics.overall.pass_rate == 1.0
