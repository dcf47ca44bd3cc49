"""Deterministic multi-echelon logistics digital twin."""

__version__ = "0.1.0"
