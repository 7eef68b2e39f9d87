"""Gradient estimation laboratory for stateful (recurrent) stochastic policies."""

__version__ = "0.1.0"
