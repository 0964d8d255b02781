"""Learned local realism scores for LiDAR point clouds."""

__version__ = "0.1.0"
