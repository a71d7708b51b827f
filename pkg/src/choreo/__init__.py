"""Numerical toolkit for choreographic motions of repelling particles in steep boxes."""

__version__ = "0.1.0"
