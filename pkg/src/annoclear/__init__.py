"""Cleaning of noisy multi-annotator nodule annotations."""

__version__ = "0.1.0"
