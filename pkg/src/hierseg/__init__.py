"""Hierarchical semantic segmentation with mixed strong and weak supervision."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
