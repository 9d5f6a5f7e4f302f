"""Generalized factorized bilinear GCN for text classification."""

__version__ = "0.1.0"
