"""Stereo SLAM with plane landmarks built from intersecting line segments."""

__version__ = "0.1.0"
