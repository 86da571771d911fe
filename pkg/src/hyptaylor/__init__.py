"""Polynomial Taylor-series reformulation of Poincare-ball neural-network operations."""
from .core import PtseConfig

__version__ = "0.1.0"
__all__ = ["PtseConfig", "__version__"]
