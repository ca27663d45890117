"""Robust Bayesian sparse-group variable selection for G-E interactions."""

__version__ = "0.1.0"
