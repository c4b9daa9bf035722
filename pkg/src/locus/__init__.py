"""Simulation and statistical verification of intrinsic random locations."""

__version__ = "0.1.0"
