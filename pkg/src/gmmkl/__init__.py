"""Desk-scale laboratory for KL approximation of densities by finite Gaussian mixtures."""

__version__ = "0.1.0"
