"""Bayesian proportion estimation, coverage calibration, and histogram de-noising."""

__version__ = "0.1.0"
