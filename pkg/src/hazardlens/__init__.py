"""Hazard ratios under frailty-induced selection: estimation, simulation and sensitivity analysis."""

__version__ = "0.1.0"
