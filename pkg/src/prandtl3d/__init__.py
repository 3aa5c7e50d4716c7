"""Simulator and verification lab for the 3D Prandtl boundary-layer equations."""

__version__ = "0.1.0"
