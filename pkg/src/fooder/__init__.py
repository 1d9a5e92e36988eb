"""Radar facial authentication and expression recognition."""

__version__ = "0.1.0"
