"""Numerical laboratory for periodic homogenization via kinetic decomposition."""

__version__ = "0.1.0"
