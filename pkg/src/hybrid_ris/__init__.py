"""Hybrid-field RIS channel simulation and turbo-structured Bayesian estimation."""

__version__ = "0.1.0"
