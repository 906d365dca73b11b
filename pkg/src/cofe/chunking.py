"""Rule-based tokenization and fixed-size overlapping chunking of documents.

The tokenizer is deliberately model-free so that chunk boundaries are
reproducible: CJK and other non-Latin symbols count one codepoint per token,
Latin letters/digits/apostrophes group into word tokens, whitespace separates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .errors import DataError

SOURCE_FORMATS = ("pdf", "ppt", "doc", "xlsx", "txt", "other")

_APOSTROPHES = ("'", "’")


@dataclass(frozen=True)
class Token:
    surface: str
    byte_span: tuple[int, int]  # UTF-8 byte offsets into the source text


@dataclass(frozen=True)
class DocumentText:
    doc_id: str
    body: str
    title: Optional[str] = None
    source_format: str = "txt"

    def __post_init__(self):
        if not self.doc_id:
            raise DataError("document has empty doc_id")
        if not self.body:
            raise DataError(f"document {self.doc_id!r} has empty body")
        if self.source_format not in SOURCE_FORMATS:
            raise DataError(
                f"document {self.doc_id!r} has unknown source_format {self.source_format!r}"
            )


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    seq: int
    text: str
    token_span: tuple[int, int]  # [start_token, end_token) within the document


def _is_word_char(ch: str) -> bool:
    # Latin letters/digits plus apostrophes form word runs; everything else
    # (including every CJK codepoint) tokenizes one codepoint at a time.
    if ch in _APOSTROPHES:
        return True
    o = ord(ch)
    if o < 128:
        return ch.isalnum()
    return 0xC0 <= o <= 0x24F and ch.isalpha()


def tokenize(text: str, language: str = "zh") -> list[Token]:
    """Deterministic segmentation with UTF-8 byte spans.

    The rules do not branch on ``language``; the tag is accepted so callers
    can pass it through uniformly.
    """
    tokens: list[Token] = []
    run_chars: list[str] = []
    run_start = 0
    byte = 0

    def flush(end: int):
        if run_chars:
            tokens.append(Token("".join(run_chars), (run_start, end)))
            run_chars.clear()

    for ch in text:
        width = len(ch.encode("utf-8"))
        if _is_word_char(ch):
            if not run_chars:
                run_start = byte
            run_chars.append(ch)
        else:
            flush(byte)
            if not ch.isspace():
                tokens.append(Token(ch, (byte, byte + width)))
        byte += width
    flush(byte)
    return tokens


def chunk_id_for(doc_id: str, seq: int) -> str:
    return f"{doc_id}#{seq:05d}"


def chunk_document(doc: DocumentText, chunk_size: int, overlap: int) -> list[Chunk]:
    """Split a document into sliding token windows of ``chunk_size`` with ``overlap``.

    Chunk text is the raw source substring covering the window's tokens, so
    interior whitespace survives intact; a present title is prepended as
    ``"<title>: "`` without counting toward the token span. The final window
    may be shorter than ``chunk_size`` but is always emitted, so every token
    lands in at least one chunk.
    """
    if chunk_size < 1:
        raise DataError(f"chunk_size must be >= 1, got {chunk_size}")
    if not 0 <= overlap < chunk_size:
        raise DataError(f"overlap must satisfy 0 <= overlap < chunk_size, got {overlap}")

    tokens = tokenize(doc.body)
    if not tokens:
        return []
    body_bytes = doc.body.encode("utf-8")
    prefix = f"{doc.title}: " if doc.title else ""

    stride = chunk_size - overlap
    chunks: list[Chunk] = []
    start = 0
    n = len(tokens)
    while True:
        end = min(start + chunk_size, n)
        lo = tokens[start].byte_span[0]
        hi = tokens[end - 1].byte_span[1]
        text = prefix + body_bytes[lo:hi].decode("utf-8")
        seq = len(chunks)
        chunks.append(Chunk(chunk_id_for(doc.doc_id, seq), doc.doc_id, seq, text, (start, end)))
        if end == n:
            break
        start += stride
    return chunks


def chunk_corpus(docs: Iterable[DocumentText], chunk_size: int, overlap: int) -> list[Chunk]:
    chunks: list[Chunk] = []
    for doc in docs:
        chunks.extend(chunk_document(doc, chunk_size, overlap))
    return chunks


def load_corpus(path: str | Path) -> list[DocumentText]:
    """Load documents from a JSONL corpus file or a directory of .txt files."""
    path = Path(path)
    if path.is_dir():
        docs = []
        for txt in sorted(path.rglob("*.txt")):
            body = txt.read_text(encoding="utf-8")
            if not body.strip():
                continue
            docs.append(DocumentText(doc_id=str(txt.relative_to(path)), body=body))
        if not docs:
            raise DataError(f"no .txt documents found under {path}")
        return docs

    if not path.is_file():
        raise DataError(f"corpus not found: {path}")
    docs = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: malformed JSON: {e.msg}") from e
            doc_id = obj.get("doc_id")
            if not doc_id:
                raise DataError(f"{path}:{lineno}: missing doc_id")
            if doc_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
            seen.add(doc_id)
            docs.append(
                DocumentText(
                    doc_id=str(doc_id),
                    body=obj.get("body") or "",
                    title=obj.get("title"),
                    source_format=obj.get("source_format") or "txt",
                )
            )
    if not docs:
        raise DataError(f"corpus {path} is empty")
    return docs


def chunk_to_dict(chunk: Chunk) -> dict:
    return {
        "chunk_id": chunk.chunk_id,
        "doc_id": chunk.doc_id,
        "seq": chunk.seq,
        "text": chunk.text,
        "token_span": list(chunk.token_span),
    }


def chunk_from_dict(obj: dict) -> Chunk:
    return Chunk(
        chunk_id=obj["chunk_id"],
        doc_id=obj["doc_id"],
        seq=int(obj["seq"]),
        text=obj["text"],
        token_span=(int(obj["token_span"][0]), int(obj["token_span"][1])),
    )
