"""Budgeted graph collaborative filtering: quantized compositional embeddings,
contribution-based graph rewiring and placeholder imputation."""

__version__ = "0.1.0"
