"""Adaptive GMsFEM solver for 2D high-contrast elliptic problems."""

__version__ = "1.0.0"
