"""Point-wise 6D pose voting over keypoint graphs, at desk scale."""

__version__ = "0.1.0"
