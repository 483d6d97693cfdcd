"""Sustained separable effects in discrete-time trials with competing events."""

__version__ = "0.1.0"
