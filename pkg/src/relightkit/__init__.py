"""Geometry-guided relighting from a flash image and a depth map."""

__version__ = "0.1.0"
