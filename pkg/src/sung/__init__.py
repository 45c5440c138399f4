"""Uncertainty-guided offline-to-online reinforcement learning on toy tasks."""
from ._ext import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
