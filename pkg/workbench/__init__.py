"""Numerical workbench for two-spin correlations, hidden-variable models and pilot-wave dynamics."""

__version__ = "0.1.0"
