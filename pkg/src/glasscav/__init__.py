"""Simulation and analysis toolkit for cavity-mediated spin glasses."""

__version__ = "0.1.0"
