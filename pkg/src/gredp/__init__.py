"""Differentially private training with gradient-preserving spectral noise."""

from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
