"""Hierarchical skill-module arithmetic calculator."""

__version__ = "0.1.0"
