"""Adaptive conformal prediction with self-supervised difficulty signals."""

__version__ = "0.1.0"

from . import conformal, data, forest, metrics, nn, pretext  # noqa: F401
