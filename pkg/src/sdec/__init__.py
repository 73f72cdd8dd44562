"""Spectral dynamics embedding control."""

__version__ = "0.1.0"
