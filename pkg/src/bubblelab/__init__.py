"""Numerical laboratory for Type II blow-up of the critical heat equation near a boundary."""

__version__ = "0.1.0"

from .bubble import DimensionConfig  # noqa: E402

__all__ = ["DimensionConfig", "__version__"]
