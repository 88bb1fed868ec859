"""Least-squares finite elements for linear elasticity and their spectra."""

__version__ = "0.1.0"
