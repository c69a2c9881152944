"""Generalized Gaussian modeling of temporal-difference errors."""

__version__ = "0.1.0"
