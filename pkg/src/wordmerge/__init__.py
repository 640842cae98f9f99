"""Hierarchical word merging for compact bag-of-words codebooks."""

__version__ = "0.1.0"
