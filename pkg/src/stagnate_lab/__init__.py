"""Stagnation of Gaussian SGD near minima: simulators, bound calculators and checks."""

__version__ = "0.1.0"
