"""Correction rule mining for binary classifiers."""

__version__ = "0.1.0"
