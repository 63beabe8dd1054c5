"""Pareto-optimal proxy metrics for online experiments."""

__version__ = "0.1.0"
