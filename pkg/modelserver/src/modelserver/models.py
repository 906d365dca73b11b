"""Model backends: thin inference wrappers with server-side batching.

Embeddings are masked mean pooling over the encoder's last hidden state,
L2-normalized. Rerank scores come from a sequence-classification cross
encoder on (query, document) pairs. Generation is greedy (temperature 0)
so repeated requests are as reproducible as the model allows.
"""

from __future__ import annotations

import torch

from .config import ModelSpec


def _batched(items, size):
    for lo in range(0, len(items), size):
        yield items[lo : lo + size]


class EmbeddingBackend:
    kind = "embed"

    def __init__(self, spec: ModelSpec, max_batch: int):
        from transformers import AutoModel, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(spec.path)
        self.model = AutoModel.from_pretrained(spec.path).to(spec.device).eval()
        self.device = spec.device
        self.max_batch = max_batch

    @torch.no_grad()
    def embed(self, texts: list[str]) -> list[list[float]]:
        rows: list[list[float]] = []
        for batch in _batched(texts, self.max_batch):
            enc = self.tokenizer(
                batch, return_tensors="pt", padding=True, truncation=True
            ).to(self.device)
            hidden = self.model(**enc).last_hidden_state
            mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
            summed = (hidden * mask).sum(dim=1)
            counts = mask.sum(dim=1).clamp(min=1)
            pooled = summed / counts
            pooled = torch.nn.functional.normalize(pooled, p=2, dim=1)
            rows.extend(pooled.cpu().double().tolist())
        return rows


class RerankBackend:
    kind = "rerank"

    def __init__(self, spec: ModelSpec, max_batch: int):
        from transformers import AutoModelForSequenceClassification, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(spec.path)
        self.model = (
            AutoModelForSequenceClassification.from_pretrained(spec.path).to(spec.device).eval()
        )
        self.device = spec.device
        self.max_batch = max_batch

    @torch.no_grad()
    def score(self, query: str, documents: list[str]) -> list[float]:
        scores: list[float] = []
        for batch in _batched(documents, self.max_batch):
            enc = self.tokenizer(
                [(query, doc) for doc in batch],
                return_tensors="pt",
                padding=True,
                truncation=True,
            ).to(self.device)
            logits = self.model(**enc).logits
            if logits.shape[-1] == 1:
                batch_scores = logits.squeeze(-1)
            else:
                batch_scores = logits[:, -1]  # relevance class of a multi-label head
            scores.extend(float(s) for s in batch_scores.cpu())
        return scores


class GenerationBackend:
    kind = "generate"

    def __init__(self, spec: ModelSpec, max_batch: int):
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(spec.path)
        self.model = AutoModelForCausalLM.from_pretrained(spec.path).to(spec.device).eval()
        self.device = spec.device

    @torch.no_grad()
    def generate(self, prompt: str, max_tokens: int | None = None) -> str:
        enc = self.tokenizer(prompt, return_tensors="pt", truncation=True).to(self.device)
        pad_id = self.tokenizer.pad_token_id
        if pad_id is None:
            pad_id = self.tokenizer.eos_token_id
        out = self.model.generate(
            **enc,
            max_new_tokens=max_tokens or 128,
            do_sample=False,  # deterministic by default
            pad_token_id=pad_id,
        )
        new_tokens = out[0][enc["input_ids"].shape[1] :]
        return self.tokenizer.decode(new_tokens, skip_special_tokens=True)


_BACKENDS = {
    "embed": EmbeddingBackend,
    "rerank": RerankBackend,
    "generate": GenerationBackend,
}


def load_backend(spec: ModelSpec, max_batch: int):
    return _BACKENDS[spec.kind](spec, max_batch)
