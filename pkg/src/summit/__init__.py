"""Scaled per-value embeddings and a masked Transformer encoder for irregular time series."""

__version__ = "0.1.0"
