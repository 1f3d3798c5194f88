"""Finite-dimensional CP-semigroup dilation toolkit."""

__version__ = "0.1.0"
