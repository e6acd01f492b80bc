"""Variance-reduced heterogeneous multiscale simulation of slow-fast SDEs."""

__version__ = "0.1.0"
