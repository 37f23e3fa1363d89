"""Twisted-type fully nonlinear elliptic operators: evaluation, grid solvers and regularity diagnostics."""

__version__ = "0.1.0"
