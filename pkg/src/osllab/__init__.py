"""Numerical laboratory for flows of one-sided Lipschitz velocity fields."""

__version__ = "0.1.0"
