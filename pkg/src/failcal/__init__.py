"""Bayesian calibration of computer models with informative simulator failures."""

__version__ = "0.1.0"
