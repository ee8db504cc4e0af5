"""Distributionally robust CVaR collision avoidance for multi-robot navigation."""

__version__ = "0.1.0"
