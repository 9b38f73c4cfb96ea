"""Learnable integration kernels for nonlocal operator learning."""

__version__ = "0.1.0"
