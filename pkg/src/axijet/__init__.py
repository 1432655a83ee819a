"""Subsonic axisymmetric jets with vorticity by a truncated free-boundary energy."""

__version__ = "0.1.0"
