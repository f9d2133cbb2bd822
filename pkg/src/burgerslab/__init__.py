"""Quadratic drift of the controlled viscous Burgers equation, numerically."""

__version__ = "0.1.0"
