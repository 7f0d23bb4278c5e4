"""Numerical lab for maximal directional operators on the periodic square."""

__version__ = "0.1.0"
