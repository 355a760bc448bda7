"""Peg-in-hole compliance control with geometry-based gain reconfiguration and policy transfer."""

__version__ = "0.1.0"
