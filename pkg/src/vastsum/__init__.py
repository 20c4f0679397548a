"""Uncertainty-aware, decoder-aligned keyshot video summarization at desk scale."""

__version__ = "0.1.0"
