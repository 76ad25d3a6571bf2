"""Numerical toolkit for iterated function systems of symplectic annulus maps."""

__version__ = "0.1.0"
