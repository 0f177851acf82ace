"""Structural alignment of embedding spaces via entropic optimal transport."""

__version__ = "0.1.0"
