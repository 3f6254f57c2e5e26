"""Numerical laboratory for the Jang-equation reduction of asymptotically
hyperbolic initial data (exact Wang models, dimensions 4-7)."""

__version__ = "0.1.0"
