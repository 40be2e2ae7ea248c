"""Depth regression with a continuous CRF over superpixel graphs."""

__version__ = "0.1.0"
