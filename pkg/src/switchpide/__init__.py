"""Solvers and verification tools for switching systems of degenerate parabolic PIDEs."""

__version__ = "0.1.0"
