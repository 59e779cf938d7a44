"""Hyperspectral reconstruction from RGB: calibration, simulation, PTNet, evaluation."""

__version__ = "0.1.0"
