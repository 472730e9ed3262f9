"""Trajectory forecasting over 16-bit geohash tokens."""

__version__ = "0.1.0"
