"""Masked trajectory/map autoencoder pre-training and motion forecasting lab."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
