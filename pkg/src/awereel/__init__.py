"""Pumping-cycle simulation and reeling-speed design for soft-kite AWE systems."""

__version__ = "0.1.0"
