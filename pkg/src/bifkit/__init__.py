"""Numerical continuation and bifurcation analysis for autonomous ODEs."""
__version__ = "0.1.0"
