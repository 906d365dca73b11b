#!/usr/bin/env python3
"""Regenerate the bundled toy corpus and dataset under data/toy/.

20 documents (8 English, 12 Chinese, ~15k tokens total) and 40 examples, 10
per query type. Fine-grained keyword elements are either verbatim spans of
the example's source document ("hits") or phrases built from a reserved
vocabulary that never occurs in any document ("misses"), so desk-scale runs
land mid-range on Recall/Accuracy instead of saturating. Two examples carry
no fine lists (exercising the skipped path) and a few carry no coarse
keywords or a foreign coarse keyword (exercising the filter edge cases).

Deterministic: a fixed seed reproduces the committed files byte for byte.
"""

import argparse
import json
import random
from pathlib import Path

from cofe.chunking import tokenize

SEED = 20240601

EN_VOCAB = (
    "alpha beta gamma delta engine market safety battery sensor policy survey railway "
    "harvest quantum signal bridge orbit basin lantern meadow copper circuit voltage "
    "temperature pressure module turbine freight cargo permit audit ledger summary forecast "
    "margin tariff vendor clinic dosage therapy antenna spectrum cadence rhythm texture"
).split()

EN_TOPICS = [
    ("battery", "storage"),
    ("railway", "freight"),
    ("sensor", "calibration"),
    ("market", "forecast"),
    ("turbine", "maintenance"),
    ("clinic", "therapy"),
    ("spectrum", "antenna"),
    ("ledger", "audit"),
]

ZH_CHARS = "产业生态技术创新发展市场安全数据评估系统模型检索文档片段问题答案质量标准流程指标规划管理服务平台基础设施运营监测分析报告研究应用场景能力建设"

ZH_TOPICS = ["智能汽车", "风力发电", "医疗影像", "供应链", "数字金融", "轨道交通",
             "农业气象", "海洋工程", "语音识别", "电子商务", "新型材料", "远程教育"]

# never used in any document body or title: guaranteed metric misses
ABSENT_EN = "kumquat zeppelin obsidian marzipan gondola".split()
ABSENT_ZH = "龙凤龟麟鹤"

QUERY_TYPES = ["Factual", "Analytical", "Comparative", "Tutorial"]


def en_sentence(rng, topic_words, want_topic):
    n = rng.randint(8, 13)
    words = [rng.choice(EN_VOCAB) for _ in range(n)]
    if want_topic:
        pos = rng.randrange(len(words))
        words[pos] = rng.choice(topic_words)
    return " ".join(words) + "."


def zh_sentence(rng, topic, want_topic):
    n = rng.randint(10, 16)
    chars = "".join(rng.choice(ZH_CHARS) for _ in range(n))
    if want_topic:
        pos = rng.randrange(max(1, len(chars) - len(topic)))
        chars = chars[:pos] + topic + chars[pos + len(topic):]
    return chars + "。"


def build_docs(rng):
    docs = []
    for k, topic_words in enumerate(EN_TOPICS):
        sentences = [
            en_sentence(rng, topic_words, rng.random() < 0.5) for _ in range(rng.randint(60, 70))
        ]
        docs.append(
            {
                "doc_id": f"doc-en-{k:02d}",
                "title": f"{topic_words[0]} field notes",
                "body": " ".join(sentences),
                "source_format": rng.choice(["pdf", "doc", "ppt", "xlsx", "txt"]),
                "_lang": "en",
                "_topic": topic_words[0],
                "_sentences": sentences,
            }
        )
    for k, topic in enumerate(ZH_TOPICS):
        sentences = [zh_sentence(rng, topic, rng.random() < 0.5) for _ in range(rng.randint(48, 58))]
        docs.append(
            {
                "doc_id": f"doc-zh-{k:02d}",
                "title": f"{topic}研究简报",
                "body": "".join(sentences),
                "source_format": rng.choice(["pdf", "doc", "ppt", "xlsx", "txt"]),
                "_lang": "zh",
                "_topic": topic,
                "_sentences": sentences,
            }
        )
    rng.shuffle(docs)
    return docs


def hit_span(rng, doc):
    """A verbatim contiguous span from a random sentence of the document."""
    sentence = rng.choice(doc["_sentences"])
    if doc["_lang"] == "en":
        words = sentence.rstrip(".").split()
        n = rng.randint(2, min(5, len(words)))
        start = rng.randrange(len(words) - n + 1)
        return " ".join(words[start : start + n])
    chars = sentence.rstrip("。")
    n = rng.randint(3, min(8, len(chars)))
    start = rng.randrange(len(chars) - n + 1)
    return chars[start : start + n]


def miss_span(rng, lang):
    if lang == "en":
        return " ".join(rng.sample(ABSENT_EN, 2))
    return "".join(rng.choice(ABSENT_ZH) for _ in range(3))


def build_query(rng, qtype, doc, w1, w2):
    topic = doc["_topic"]
    if doc["_lang"] == "en":
        return {
            "Factual": f"What does the {topic} material state about {w1}?",
            "Analytical": f"Why is {w1} significant for the {topic} work described?",
            "Comparative": f"What distinguishes {w1} from {w2} in the {topic} material?",
            "Tutorial": f"What are the steps involving {w1} in the {topic} material?",
        }[qtype]
    return {
        "Factual": f"{topic}资料中关于{w1}的说明是什么？",
        "Analytical": f"为什么{w1}对{topic}的发展重要？",
        "Comparative": f"{w1}与{w2}在{topic}方面有什么区别？",
        "Tutorial": f"围绕{w1}开展{topic}工作的步骤是什么？",
    }[qtype]


def pick_word(rng, doc):
    if doc["_lang"] == "en":
        return rng.choice(rng.choice(doc["_sentences"]).rstrip(".").split())
    sentence = rng.choice(doc["_sentences"]).rstrip("。")
    start = rng.randrange(max(1, len(sentence) - 2))
    return sentence[start : start + 2]


def build_examples(rng, docs):
    examples = []
    for i in range(40):
        doc = docs[i % len(docs)]
        lang = doc["_lang"]
        qtype = QUERY_TYPES[i % 4]

        if i in (17, 38):
            fine = []  # no retrieval ground truth: exercised as "skipped"
        else:
            fine = []
            for _ in range(rng.randint(1, 4)):
                lst = []
                for _ in range(rng.randint(1, 3)):
                    if rng.random() < 0.72:
                        lst.append(hit_span(rng, doc))
                    else:
                        lst.append(miss_span(rng, lang))
                fine.append(lst)

        if i % 10 == 3:
            coarse = []  # vacuous filter: every chunk kept
        elif i % 20 == 6:
            other = docs[(i + 7) % len(docs)]
            coarse = [other["_topic"]]  # foreign topic: filters out most chunks
        else:
            coarse = [doc["_topic"]]

        w1, w2 = pick_word(rng, doc), pick_word(rng, doc)
        # a contiguous run of sentences: answers that retrieve the right chunk
        # share a long common subsequence with the reference; varying the run
        # length spreads the judged correctness scores
        run_len = rng.choice([2, 3, 4, 6, 8, 10])
        start = rng.randrange(len(doc["_sentences"]) - run_len)
        run = doc["_sentences"][start : start + run_len]
        joiner = " " if lang == "en" else ""
        excerpt = joiner.join(run)
        reference = (
            f"According to the {doc['_topic']} material: {excerpt} In short, {pick_word(rng, doc)} matters."
            if lang == "en"
            else f"根据{doc['_topic']}资料：{excerpt}总体来看，相关{pick_word(rng, doc)}十分重要。"
        )
        examples.append(
            {
                "id": f"q{i:03d}",
                "language": lang,
                "query_type": qtype,
                "query": build_query(rng, qtype, doc, w1, w2),
                "coarse_keywords": coarse,
                "fine_keywords": fine,
                "reference_answer": reference,
            }
        )
    return examples


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data/toy", help="output directory")
    parser.add_argument("--seed", type=int, default=SEED)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    docs = build_docs(rng)
    examples = build_examples(rng, docs)

    # the reserved miss vocabulary must never leak into the corpus
    for doc in docs:
        text = (doc["title"] + " " + doc["body"]).lower()
        assert not any(w in text for w in ABSENT_EN)
        assert not any(c in text for c in ABSENT_ZH)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "corpus.jsonl").open("w", encoding="utf-8") as f:
        for doc in docs:
            public = {k: v for k, v in doc.items() if not k.startswith("_")}
            f.write(json.dumps(public, ensure_ascii=False) + "\n")
    with (out / "dataset.jsonl").open("w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(ex, ensure_ascii=False) + "\n")

    total_tokens = sum(len(tokenize(d["body"])) for d in docs)
    by_type = {t: sum(1 for e in examples if e["query_type"] == t) for t in QUERY_TYPES}
    print(f"{len(docs)} documents, {total_tokens} body tokens -> {out / 'corpus.jsonl'}")
    print(f"{len(examples)} examples {by_type} -> {out / 'dataset.jsonl'}")


if __name__ == "__main__":
    main()
