"""Flooded-building segmentation by multi-sensor fusion."""
__version__ = "0.1.0"
