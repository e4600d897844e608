"""Estimation, control and simulation toolkit for a wheeled-legged excavator."""

__version__ = "0.1.0"

from . import lie  # noqa: F401

__all__ = ["lie", "__version__"]
