import itertools
import json
import random

import pytest

from cofe.chunking import Chunk
from cofe.dataset import EvalExample, QueryType

_counter = itertools.count()


def make_chunk(chunk_id: str, text: str, doc_id: str = "doc", seq: int = 0) -> Chunk:
    return Chunk(chunk_id=chunk_id, doc_id=doc_id, seq=seq, text=text, token_span=(0, 1))


def make_example(coarse, fine, query_type=QueryType.FACTUAL, ex_id=None, language="en") -> EvalExample:
    return EvalExample(
        id=ex_id or f"ex{next(_counter):04d}",
        query_type=query_type,
        query="what does the document say?",
        reference_answer="it says things.",
        coarse_keywords=tuple(coarse),
        fine_keywords=tuple(tuple(l) for l in fine),
        language=language,
    )


@pytest.fixture
def chunk_factory():
    return make_chunk


@pytest.fixture
def example_factory():
    return make_example


def write_toy_files(dirpath, n_docs=5, n_examples=8, seed=23):
    """Small corpus.jsonl + dataset.jsonl pair for CLI-level tests."""
    rng = random.Random(seed)
    words = "alpha beta gamma delta engine market sensor battery orbit copper".split()
    docs = []
    for d in range(n_docs):
        topic = words[d % len(words)]
        body = " ".join(
            rng.choice(words + [topic, topic]) for _ in range(140)
        )
        docs.append({"doc_id": f"doc{d}", "title": f"{topic} notes", "body": body})
    corpus = dirpath / "corpus.jsonl"
    corpus.write_text("\n".join(json.dumps(d) for d in docs) + "\n", "utf-8")

    examples = []
    types = ["Factual", "Analytical", "Comparative", "Tutorial"]
    for i in range(n_examples):
        doc = docs[i % n_docs]
        toks = doc["body"].split()
        hit = " ".join(toks[5:8])
        fine = [[hit]] if i % 3 else [[hit], ["span that appears nowhere zz"]]
        examples.append(
            {
                "id": f"ex{i}",
                "language": "en",
                "query_type": types[i % 4],
                "query": f"what about {toks[0]} and {toks[1]}?",
                "coarse_keywords": [toks[2]] if i % 4 else [],
                "fine_keywords": fine,
                "reference_answer": " ".join(toks[:15]),
            }
        )
    dataset = dirpath / "dataset.jsonl"
    dataset.write_text("\n".join(json.dumps(e) for e in examples) + "\n", "utf-8")
    return dataset, corpus
