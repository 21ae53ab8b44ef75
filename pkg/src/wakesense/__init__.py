"""Estimate a leader propeller's lateral motion from distributed wake-pressure readings."""
__version__ = "0.1.0"
