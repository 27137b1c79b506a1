"""Stabilizing geometric functionals, random weighted measures and
normal-approximation diagnostics for marked Poisson point processes."""

__version__ = "0.1.0"
