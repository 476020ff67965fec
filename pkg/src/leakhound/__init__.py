"""Detect PII leaks in HTTP flows with bag-of-words classifiers and LIME-guided feature selection."""

__version__ = "0.1.0"
