"""Hourly forecasting of chest X-ray embedding trajectories from irregular ICU data."""

__version__ = "0.1.0"
