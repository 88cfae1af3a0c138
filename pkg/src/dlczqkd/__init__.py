"""Gaussian-state analysis of DLCZ repeaters and entanglement-based QKD."""

__version__ = "0.1.0"
