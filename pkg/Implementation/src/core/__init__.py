"""Numeric primitives and infrastructure for SMELL."""

__version__ = "1.0.0"
