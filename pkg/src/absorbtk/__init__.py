"""Finite-truncation toolkit for differentiable absorption of Hilbert C*-modules."""

__version__ = "0.1.0"
