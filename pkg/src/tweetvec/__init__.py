"""Tweet embeddings from word context, attention-weighted temporal context and user vectors."""

__version__ = "0.1.0"
