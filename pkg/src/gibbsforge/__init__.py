"""Noise-accelerated Gibbs-state preparation in an extended XZ spin chain."""

__version__ = "0.1.0"
