"""Jamming game simulator: learning transmitter, learning jammer, defense."""

__version__ = "0.1.0"
