"""Simulation of station-based bike sharing with dynamic bike relocation."""

__version__ = "0.1.0"
