"""Kinematic-informed neural networks for walk-forward index forecasting."""

__version__ = "0.1.0"
