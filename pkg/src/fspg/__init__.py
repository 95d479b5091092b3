"""Federated smoothing proximal gradient for penalized quantile regression."""

__version__ = "0.1.0"
