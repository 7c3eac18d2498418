"""Blind super-resolution with kernelized back-projection networks."""

__version__ = "0.1.0"
