"""Learned bidirectional arbitrary-scale image rescaling on an exact subpixel lattice."""

__version__ = "0.1.0"
