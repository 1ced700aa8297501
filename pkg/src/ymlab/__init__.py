"""Numerical laboratory for type-II blowup of the radial Yang-Mills heat flow."""

__version__ = "0.1.0"
