"""Nonparametric posterior learning for emission tomography with segmentation side information."""

__version__ = "0.1.0"
