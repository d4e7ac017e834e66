"""Panoramic multi-object tracking with track-prior feedback, plus evaluation tools."""

__version__ = "0.1.0"
