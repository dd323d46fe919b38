"""Retrosynthesis planning with a residual energy-based route reranker."""

__version__ = "0.1.0"
