"""Numerical laboratory for divergence-form operators with BMO anti-symmetric coefficients."""

__version__ = "0.1.0"
