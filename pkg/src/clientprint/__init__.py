"""Consensus-client block fingerprinting from reward features with KNN and MLP classifiers."""

__version__ = "0.1.0"
