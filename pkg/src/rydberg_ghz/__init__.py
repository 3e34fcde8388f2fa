"""Bayesian optimal control of GHZ states in Rydberg lattices."""

__version__ = "0.1.0"
