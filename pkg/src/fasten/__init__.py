"""Noisy-label learning with per-iteration transition matrix estimation and label correction."""

__version__ = "0.1.0"
