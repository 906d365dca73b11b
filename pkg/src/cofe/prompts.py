"""Versioned prompt templates shipped as package data.

Templates are plain text with ``{name}`` placeholders. Rendering substitutes
only the fields the caller supplies, so literal braces elsewhere in a
template (e.g. JSON examples) pass through untouched. Template hashes go
into run manifests so a run records exactly which prompt text it used.
"""

from __future__ import annotations

import hashlib
from importlib import resources

from .errors import DataError

_SEARCH = ("templates", "templates/construct")


def template_text(template_id: str) -> str:
    root = resources.files(__package__)
    for sub in _SEARCH:
        res = root / sub / f"{template_id}.txt"
        if res.is_file():
            return res.read_text(encoding="utf-8").rstrip("\n")
    raise DataError(f"unknown template {template_id!r}")


def render_template(template_id: str, **fields: str) -> str:
    text = template_text(template_id)
    for key, value in fields.items():
        text = text.replace("{" + key + "}", value)
    return text


def template_hash(template_id: str) -> str:
    return hashlib.sha256(template_text(template_id).encode("utf-8")).hexdigest()


def render_context_block(chunk_texts: list[str]) -> str:
    """Numbered context lines used by the RAG and judge prompts."""
    if not chunk_texts:
        return "(none)"
    return "\n".join(f"[{i}] {text}" for i, text in enumerate(chunk_texts, start=1))
