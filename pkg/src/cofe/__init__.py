"""Full-chain evaluation harness for retrieval-augmented generation pipelines."""

__version__ = "0.1.0"

TOKENIZER_ID = "unicode-rule-v1"
