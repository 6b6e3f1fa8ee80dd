"""Solvers and diagnostics for u_t = (L(u_x))_x with monotone, possibly multivalued L."""

__version__ = "0.1.0"
