"""HTTP server hosting local embedding/reranker/LLM models on the native wire protocol."""

__version__ = "0.1.0"
