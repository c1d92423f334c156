"""Numerical laboratory for the magnetotelluric inverse problem."""

__version__ = "0.1.0"
