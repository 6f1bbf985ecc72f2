"""Sequence-to-sequence competing-risks survival model with GRU-D encoding."""

__version__ = "0.1.0"
