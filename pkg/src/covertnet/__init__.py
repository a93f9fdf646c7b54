"""Learned per-node coverage radii for low-detectability ad-hoc networks."""

__version__ = "0.1.0"
