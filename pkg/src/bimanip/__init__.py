"""Bimanual manipulability learning and manipulability-guided diffusion."""

__version__ = "0.1.0"
