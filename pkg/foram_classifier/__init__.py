"""Microfossil specimen extraction, transfer-learning classification and MC dropout analysis."""

__version__ = "0.1.0"
