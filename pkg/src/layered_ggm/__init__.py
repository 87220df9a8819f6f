"""Penalized maximum-likelihood estimation of multi-layered Gaussian graphical models."""
__version__ = "0.1.0"
